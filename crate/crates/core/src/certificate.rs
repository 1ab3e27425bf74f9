//! Certificates of extremality: a trace-one PSD matrix `B` on a cluster with
//! `Σ_ab B_ab L(f_a, f_b) = 0`.
//!
//! The set `K = {Σ L(f_i) : Σ ‖f_i‖² = 1}` is the image of the spectrahedron
//! under `B ↦ Σ B_ab Λ_ab`, so `0 ∈ K` is decided by minimizing the squared
//! `L²(v_g~)` norm of that image. When the minimum is positive, the minimizer
//! `ψ = Σ B*_ab Λ_ab` is itself a separating function: `⟨ψ, u⟩ ≥ ‖ψ‖² > 0`
//! for every `u ∈ K`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectrahedron::{bottom_eigenpair, factor_psd, QuadraticOverSpectrahedron, SolverOptions};
use crate::spectral::EigenspaceCluster;
use crate::surface::SurfaceModel;
use crate::variation::polarized_l;

/// Default relative certification threshold (times `max_a ‖Λ_aa‖`).
pub const DEFAULT_CERT_TOL: f64 = 1e-7;

/// Polarized `L` on a cluster: `Λ_ab = ½(L(f_a + f_b) - L(f_a) - L(f_b))`
/// sampled at quadrature nodes, with the deformed volume weights.
#[derive(Clone, Debug)]
pub struct PolarizedL {
    d: usize,
    /// Index of the first eigenvalue of the cluster, when known.
    pub cluster_k: Option<usize>,
    pub lambda: f64,
    /// Quadrature weights of `v_g~`.
    pub weights: DVector<f64>,
    entries: Vec<DVector<f64>>,
}

impl PolarizedL {
    /// Build from a full symmetric table of samples (`entries[a + d*b]`).
    pub fn from_entries(
        d: usize,
        lambda: f64,
        weights: DVector<f64>,
        entries: Vec<DVector<f64>>,
        cluster_k: Option<usize>,
    ) -> Self {
        assert_eq!(entries.len(), d * d);
        assert!(entries.iter().all(|e| e.len() == weights.len()));
        Self {
            d,
            cluster_k,
            lambda,
            weights,
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn entry(&self, a: usize, b: usize) -> &DVector<f64> {
        &self.entries[a + self.d * b]
    }

    /// `Σ_ab B_ab Λ_ab`
    pub fn combine(&self, b: &DMatrix<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.weights.len());
        for i in 0..self.d {
            for j in 0..self.d {
                if b[(i, j)] != 0.0 {
                    out.axpy(b[(i, j)], self.entry(i, j), 1.0);
                }
            }
        }
        out
    }

    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        self.weights.iter().zip(u.iter().zip(v.iter())).map(|(w, (a, b))| w * a * b).sum()
    }

    pub fn norm(&self, u: &DVector<f64>) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    pub fn integral(&self, u: &DVector<f64>) -> f64 {
        self.weights.dot(u)
    }

    /// `max_a ‖Λ_aa‖`, the scale for relative thresholds.
    pub fn scale(&self) -> f64 {
        (0..self.d).map(|a| self.norm(self.entry(a, a))).fold(0.0, f64::max)
    }

    fn problem(&self) -> QuadraticOverSpectrahedron {
        let n = self.weights.len();
        let sw = self.weights.map(f64::sqrt);
        let mut atoms = DMatrix::zeros(n, self.d * self.d);
        for (c, e) in self.entries.iter().enumerate() {
            atoms.set_column(c, &e.component_mul(&sw));
        }
        QuadraticOverSpectrahedron::from_atom_matrix(self.d, &atoms)
    }
}

/// Polarized `L` for the cluster basis at the cluster's metric.
pub fn polarize(model: &SurfaceModel, cluster: &EigenspaceCluster) -> PolarizedL {
    let d = cluster.dim();
    let members: Vec<DVector<f64>> = (0..d).map(|a| cluster.member(a)).collect();
    let mut entries = vec![DVector::zeros(model.node_count()); d * d];
    for a in 0..d {
        for b in a..d {
            let v = polarized_l(model, cluster, &members[a], &members[b]);
            entries[b + d * a] = v.clone();
            entries[a + d * b] = v;
        }
    }
    PolarizedL::from_entries(
        d,
        cluster.lambda,
        model.weights().component_mul(&cluster.factor.values),
        entries,
        Some(cluster.k),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    CertifiedExtremal,
    NotCertified,
}

#[derive(Clone, Copy, Debug)]
pub struct CertifyOptions {
    /// Relative threshold, multiplied by [`PolarizedL::scale`].
    pub tol_rel: f64,
    /// Absolute threshold; overrides `tol_rel` when set.
    pub tol_abs: Option<f64>,
    pub max_iters: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            tol_rel: DEFAULT_CERT_TOL,
            tol_abs: None,
            max_iters: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExtremalityCertificate {
    pub verdict: Verdict,
    /// Trace-one PSD matrix on the cluster basis.
    pub b: DMatrix<f64>,
    /// `‖Σ B_ab Λ_ab‖` in `L²(v_g~)`.
    pub residual: f64,
    /// Threshold the residual was compared against.
    pub tolerance: f64,
    /// Cluster-basis coordinates `c_i` with `B = Σ c_i c_iᵀ`.
    pub functions: Vec<DVector<f64>>,
    /// Solver ran out of iterations with the residual in `(τ, 10τ)`.
    pub inconclusive: bool,
    /// Separating function samples, when not certified.
    pub witness: Option<DVector<f64>>,
    /// `min_{u ∈ K} ⟨ψ, u⟩` for the witness `ψ`.
    pub witness_margin: Option<f64>,
    /// `false` when the cluster is not `λ_1`: the verdict is then only the
    /// necessary condition.
    pub sufficient: bool,
    pub duality_gap: f64,
    pub iterations: usize,
    /// Objective `R(B)` per iteration.
    pub history: Vec<f64>,
}

/// Decide whether `0 ∈ K` for the polarized family.
pub fn certify(lam: &PolarizedL, opts: &CertifyOptions) -> Result<ExtremalityCertificate> {
    let d = lam.dim();
    if d == 0 {
        return Err(Error::InvalidInput("empty cluster".into()));
    }
    let tolerance = opts.tol_abs.unwrap_or(opts.tol_rel * lam.scale());
    let sufficient = lam.cluster_k == Some(1);

    if d == 1 {
        // A simple eigenvalue is never extremal: L has trivial kernel on E_k.
        let b = DMatrix::from_element(1, 1, 1.0);
        let psi = lam.entry(0, 0).clone();
        let residual = lam.norm(&psi);
        let margin = lam.inner(&psi, lam.entry(0, 0));
        return Ok(ExtremalityCertificate {
            verdict: Verdict::NotCertified,
            b,
            residual,
            tolerance,
            functions: vec![DVector::from_element(1, 1.0)],
            inconclusive: false,
            witness: Some(psi),
            witness_margin: Some(margin),
            sufficient,
            duality_gap: 0.0,
            iterations: 0,
            history: vec![residual * residual],
        });
    }

    let problem = lam.problem();
    let sol = problem.minimize(&SolverOptions {
        max_iters: opts.max_iters,
        target_residual: 1e-3 * tolerance,
        gap_tol: (1e-9 * lam.scale()).powi(2),
    });
    let b = (&sol.b + sol.b.transpose()) * 0.5;
    let combined = lam.combine(&b);
    let residual = lam.norm(&combined);
    let certified = residual <= tolerance;
    let inconclusive = !certified && !sol.converged && residual < 10.0 * tolerance;
    let (witness, witness_margin) = if certified {
        (None, None)
    } else {
        let g = DMatrix::from_fn(d, d, |i, j| lam.inner(&combined, lam.entry(i, j)));
        let (margin, _) = bottom_eigenpair(&((&g + g.transpose()) * 0.5));
        (Some(combined), Some(margin))
    };
    Ok(ExtremalityCertificate {
        verdict: if certified {
            Verdict::CertifiedExtremal
        } else {
            Verdict::NotCertified
        },
        functions: factor_psd(&b, 1e-12),
        b,
        residual,
        tolerance,
        inconclusive,
        witness,
        witness_margin,
        sufficient,
        duality_gap: sol.gap,
        iterations: sol.iterations,
        history: sol.history,
    })
}

/// Model-basis coefficients of the extracted functions `f_i = Σ_a c_ia f_a`.
pub fn model_functions(cluster: &EigenspaceCluster, cert: &ExtremalityCertificate) -> Vec<DVector<f64>> {
    cert.functions.iter().map(|c| &cluster.basis * c).collect()
}

/// `‖Σ f_i² - mean‖` in `L²(v_g~)`; zero exactly when `Σ L(f_i) = 0` on a
/// surface, since `Δ_g~(Σ f_i²) = λ⁻¹ Σ L(f_i)`.
pub fn cross_check_constancy(model: &SurfaceModel, cluster: &EigenspaceCluster, cert: &ExtremalityCertificate) -> Result<f64> {
    let fs = model_functions(cluster, cert);
    if fs.is_empty() {
        return Err(Error::EmptyCertificate);
    }
    let mut sum = DVector::zeros(model.node_count());
    for f in &fs {
        let v = model.eval(f);
        sum += v.component_mul(&v);
    }
    let area = model.integrate(&DVector::from_element(model.node_count(), 1.0), Some(&cluster.factor))?;
    let mean = model.integrate(&sum, Some(&cluster.factor))? / area;
    let centered = sum.add_scalar(-mean);
    Ok(model.inner(&centered, &centered, Some(&cluster.factor)).max(0.0).sqrt())
}
