//! Laplace–Beltrami spectra of conformal metrics `g~ = e^σ g`.
//!
//! In two dimensions the Dirichlet energy is conformally invariant, so the
//! stiffness matrix never depends on φ; only the mass matrix carries the
//! conformal factor. The discrete problem is `S v = λ M_σ v`.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::surface::{ConformalFactor, KahlerPotential, SurfaceModel};

/// Relative gap below which neighbouring eigenvalues form one cluster.
pub const DEFAULT_CLUSTER_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct SpectralData {
    /// Ascending, length `n_eigs`.
    pub eigenvalues: Vec<f64>,
    /// Columns are `L²(v_g~)`-normalized eigenfunctions in the model basis.
    pub eigvecs: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    pub potential: KahlerPotential,
    pub factor: ConformalFactor,
    /// Eigenvalues strictly below this are resolved by the truncation.
    pub trusted_below: f64,
    /// First eigenvalue not retained, if any; needed to certify the gap
    /// above the last retained cluster.
    pub next_eigenvalue: Option<f64>,
}

impl SpectralData {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn is_trusted(&self, index: usize) -> bool {
        self.eigenvalues
            .get(index)
            .is_some_and(|&l| l < self.trusted_below)
    }

    /// `‖S v - λ M_σ v‖ / ‖v‖` for eigenpair `index`.
    pub fn residual(&self, model: &SurfaceModel, index: usize) -> f64 {
        let v = self.eigvecs.column(index);
        let sv = v.component_mul(model.laplace_eigenvalues());
        let mv = &self.mass * v;
        (sv - mv * self.eigenvalues[index]).norm() / v.norm()
    }

    /// First eigenvalue `λ_1`.
    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[1]
    }
}

/// Lowest `n_eigs` eigenpairs of the metric defined by `phi`.
pub fn solve_spectrum(model: &SurfaceModel, phi: &KahlerPotential, n_eigs: usize) -> Result<SpectralData> {
    let factor = model.conformal_factor(phi)?;
    solve_with_factor(model, phi.clone(), factor, n_eigs)
}

pub(crate) fn solve_with_factor(
    model: &SurfaceModel,
    potential: KahlerPotential,
    factor: ConformalFactor,
    n_eigs: usize,
) -> Result<SpectralData> {
    let dim = model.dim();
    if n_eigs > dim || n_eigs == 0 {
        return Err(Error::TooManyEigenpairs {
            requested: n_eigs,
            available: dim,
        });
    }
    let mass = model.mass_matrix(Some(&factor));
    let chol = Cholesky::new(mass.clone()).ok_or(Error::MassNotPositiveDefinite)?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(dim, dim))
        .ok_or(Error::MassNotPositiveDefinite)?;

    // C = L^{-1} S L^{-T} with S diagonal and PSD: C = X Xᵀ, X = L^{-1} diag(√s).
    let mut x = l_inv.clone();
    for (j, mut col) in x.column_iter_mut().enumerate() {
        col *= model.laplace_eigenvalues()[j].sqrt();
    }
    let c = &x * x.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let back = l_inv.transpose();
    let mut eigvecs = DMatrix::zeros(dim, n_eigs);
    let mut eigenvalues = Vec::with_capacity(n_eigs);
    for (out, &src) in order.iter().take(n_eigs).enumerate() {
        let mut v = &back * eig.eigenvectors.column(src);
        // Deterministic sign: largest-magnitude coefficient positive.
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v = -v;
        }
        eigvecs.set_column(out, &v);
        eigenvalues.push(eig.eigenvalues[src].max(0.0));
    }
    let next_eigenvalue = order.get(n_eigs).map(|&i| eig.eigenvalues[i]);
    Ok(SpectralData {
        eigenvalues,
        eigvecs,
        mass,
        potential,
        factor,
        trusted_below: 0.5 * model.laplace_eigenvalues().max(),
        next_eigenvalue,
    })
}

/// A numerically resolved eigenspace `E_k`.
#[derive(Clone, Debug)]
pub struct EigenspaceCluster {
    /// Index of the first eigenvalue in the cluster.
    pub k: usize,
    /// Mean of the member eigenvalues.
    pub lambda: f64,
    pub eigenvalues: Vec<f64>,
    /// `dim × d` coefficient matrix, generalized-orthonormal.
    pub basis: DMatrix<f64>,
    /// Mass matrix `M_σ` of the metric the cluster was computed at.
    pub mass: DMatrix<f64>,
    pub factor: ConformalFactor,
    pub potential: KahlerPotential,
}

impl EigenspaceCluster {
    /// Multiplicity `d`.
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn member(&self, a: usize) -> nalgebra::DVector<f64> {
        self.basis.column(a).into_owned()
    }

    /// Same eigenspace expressed in the rotated basis `basis * q`.
    pub fn rotated(&self, q: &DMatrix<f64>) -> Self {
        Self {
            basis: &self.basis * q,
            ..self.clone()
        }
    }
}

/// Maximal `tol`-cluster of eigenvalues containing `index`.
pub fn cluster(spec: &SpectralData, index: usize, tol: f64) -> Result<EigenspaceCluster> {
    let (start, end) = cluster_bounds(spec, index, tol)?;
    let eigenvalues = spec.eigenvalues[start..end].to_vec();
    let lambda = eigenvalues.iter().sum::<f64>() / eigenvalues.len() as f64;
    Ok(EigenspaceCluster {
        k: start,
        lambda,
        eigenvalues,
        basis: spec.eigvecs.columns(start, end - start).into_owned(),
        mass: spec.mass.clone(),
        factor: spec.factor.clone(),
        potential: spec.potential.clone(),
    })
}

fn cluster_bounds(spec: &SpectralData, index: usize, tol: f64) -> Result<(usize, usize)> {
    let n = spec.len();
    if index == 0 || index >= n {
        return Err(Error::IndexOutOfRange {
            index,
            available: n,
        });
    }
    let ev = &spec.eigenvalues;
    let gap = tol * ev[index].abs().max(f64::MIN_POSITIVE);
    let mut start = index;
    while start > 1 && ev[start] - ev[start - 1] <= gap {
        start -= 1;
    }
    let mut end = index + 1;
    while end < n && ev[end] - ev[end - 1] <= gap {
        end += 1;
    }
    let tail_ok = if end < n {
        true
    } else {
        spec.next_eigenvalue.is_some_and(|next| next - ev[n - 1] > gap)
    };
    let untrusted = ev[end - 1] >= spec.trusted_below;
    if !tail_ok || untrusted {
        return Err(Error::UntrustedCluster {
            index,
            lambda: ev[index],
            trusted_below: spec.trusted_below,
        });
    }
    Ok((start, end))
}

/// Summary of one cluster for reports.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClusterSummary {
    pub k: usize,
    pub lambda: f64,
    pub dim: usize,
}

/// All resolved clusters above the zero eigenvalue, in ascending order; stops
/// at the first cluster that is untrusted or not separated from the tail.
pub fn cluster_summaries(spec: &SpectralData, tol: f64) -> Vec<ClusterSummary> {
    let mut out = Vec::new();
    let mut i = 1;
    while i < spec.len() {
        match cluster_bounds(spec, i, tol) {
            Ok((start, end)) => {
                let lambda = spec.eigenvalues[start..end].iter().sum::<f64>() / (end - start) as f64;
                out.push(ClusterSummary {
                    k: start,
                    lambda,
                    dim: end - start,
                });
                i = end;
            }
            Err(_) => break,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::SurfaceKind;
    use approx::assert_relative_eq;

    #[test]
    fn round_sphere_low_spectrum() {
        let m = SurfaceModel::new(SurfaceKind::unit_sphere(), 8).unwrap();
        let spec = solve_spectrum(&m, &KahlerPotential::zero(&m), 10).unwrap();
        let expected = [0.0, 2.0, 2.0, 2.0, 6.0, 6.0, 6.0, 6.0, 6.0, 12.0];
        for (got, want) in spec.eigenvalues.iter().zip(expected) {
            assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{got} vs {want}");
        }
        // constant eigenvector
        let v0 = spec.eigvecs.column(0);
        assert!(v0.rows(1, m.dim() - 1).amax() < 1e-10);
    }

    #[test]
    fn square_torus_low_spectrum() {
        let m = SurfaceModel::new(SurfaceKind::square_torus(), 3).unwrap();
        let spec = solve_spectrum(&m, &KahlerPotential::zero(&m), 6).unwrap();
        let expected = [0.0, 1.0, 1.0, 1.0, 1.0, 2.0];
        for (got, want) in spec.eigenvalues.iter().zip(expected) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn sphere_radius_two_scales_spectrum() {
        let m = SurfaceModel::new(SurfaceKind::RoundSphere { radius: 2.0 }, 6).unwrap();
        let spec = solve_spectrum(&m, &KahlerPotential::zero(&m), 5).unwrap();
        assert_relative_eq!(spec.lambda1(), 0.5, max_relative = 1e-10);
    }

    #[test]
    fn sphere_cluster_l1() {
        let m = SurfaceModel::new(SurfaceKind::unit_sphere(), 8).unwrap();
        let spec = solve_spectrum(&m, &KahlerPotential::zero(&m), 12).unwrap();
        let c = cluster(&spec, 2, DEFAULT_CLUSTER_TOL).unwrap();
        assert_eq!((c.k, c.dim()), (1, 3));
        assert_relative_eq!(c.lambda, 2.0, max_relative = 1e-10);
        let gram = c.basis.transpose() * &spec.mass * &c.basis;
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn rectangular_torus_first_cluster_is_a_pair() {
        let m = SurfaceModel::new(SurfaceKind::rectangular_torus(), 4).unwrap();
        let spec = solve_spectrum(&m, &KahlerPotential::zero(&m), 8).unwrap();
        let c = cluster(&spec, 1, DEFAULT_CLUSTER_TOL).unwrap();
        assert_eq!(c.dim(), 2);
        assert_relative_eq!(c.lambda, 0.25, max_relative = 1e-10);
    }

    #[test]
    fn simple_eigenvalue_gives_singleton() {
        // A cos(y/2)-type potential splits the rectangular-torus pair.
        let m = SurfaceModel::new(SurfaceKind::rectangular_torus(), 4).unwrap();
        let idx = m
            .modes()
            .iter()
            .position(|md| {
                *md == crate::surface::Mode::Fourier {
                    n1: 0,
                    n2: 2,
                    parity: crate::surface::Parity::Cos,
                }
            })
            .unwrap();
        let phi = KahlerPotential::single_mode(&m, idx, 0.5);
        let spec = solve_spectrum(&m, &phi, 8).unwrap();
        let c = cluster(&spec, 1, DEFAULT_CLUSTER_TOL).unwrap();
        assert_eq!(c.dim(), 1);
    }

    #[test]
    fn cluster_touching_tail_is_refused() {
        let m = SurfaceModel::new(SurfaceKind::unit_sphere(), 8).unwrap();
        let spec = solve_spectrum(&m, &KahlerPotential::zero(&m), 3).unwrap();
        assert!(matches!(
            cluster(&spec, 1, DEFAULT_CLUSTER_TOL),
            Err(Error::UntrustedCluster { .. })
        ));
        let spec = solve_spectrum(&m, &KahlerPotential::zero(&m), 81).unwrap();
        // l = 6 has λ = 42 above the trust threshold 36.
        assert!(matches!(
            cluster(&spec, 40, DEFAULT_CLUSTER_TOL),
            Err(Error::UntrustedCluster { .. })
        ));
    }

    #[test]
    fn too_many_eigenpairs() {
        let m = SurfaceModel::new(SurfaceKind::unit_sphere(), 2).unwrap();
        assert!(matches!(
            solve_spectrum(&m, &KahlerPotential::zero(&m), 10),
            Err(Error::TooManyEigenpairs { .. })
        ));
    }

    #[test]
    fn summaries_of_round_sphere() {
        let m = SurfaceModel::new(SurfaceKind::unit_sphere(), 8).unwrap();
        let spec = solve_spectrum(&m, &KahlerPotential::zero(&m), 20).unwrap();
        let s = cluster_summaries(&spec, DEFAULT_CLUSTER_TOL);
        let dims: Vec<usize> = s.iter().map(|c| c.dim).collect();
        assert_eq!(dims, vec![3, 5, 7]);
    }
}
