//! First variation of eigenvalues along rays `φ_base + t φ_dir` in a Kähler
//! class of a surface.
//!
//! For a surface the fourth-order operator `L(f) = δ^c δ(f dd^c f)` restricted
//! to a `λ`-eigenspace is `L(f) = 2(λ² f² - λ |∇f|²_g~)`, and the variation of
//! the Laplacian along `φ` is `Δ̇_φ f = (Δ_g~ f)(Δ_g~ φ)` because
//! `(dd^c f, dd^c φ) = (Δf)(Δφ)` when `|ω|² = 1`.
//!
//! The one-sided derivatives of the eigenvalue branches through a cluster
//! are the eigenvalues of the Gram matrix of `Q_φ(f) = ∫ f Δ̇_φ f v_g~`; this
//! module computes both sides and compares them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{cluster, solve_with_factor, EigenspaceCluster};
use crate::surface::{ConformalFactor, KahlerPotential, SurfaceModel, POSITIVITY_FLOOR};

/// Default one-sided steps for the finite-difference oracle.
pub const DEFAULT_STEPS: [f64; 3] = [1e-3, 5e-4, 2.5e-4];

/// Fraction of the estimated branch-crossing distance allowed for the
/// largest finite-difference step.
const GAP_STEP_FRACTION: f64 = 0.02;

/// Smallest step tried before giving up on an inadmissible ray.
pub const STEP_FLOOR: f64 = 1e-9;

/// `L(f)` samples for `f` in the span of `cluster` (full model coefficients).
pub fn l_on_eigenspace(model: &SurfaceModel, cluster: &EigenspaceCluster, f: &DVector<f64>) -> Result<DVector<f64>> {
    check_length(model, f)?;
    let residual = span_residual(cluster, f);
    let scale = f.dot(&(&cluster.mass * f)).sqrt().max(1.0);
    if residual > 1e-8 * scale {
        return Err(Error::NotInClusterSpan { residual });
    }
    Ok(polarized_l(model, cluster, f, f))
}

/// Bilinear form of `L` on the cluster:
/// `L(f, g) = 2(λ² f g - λ e^{-σ} ∇f·∇g)`, so that `L(f, f) = L(f)`.
pub fn polarized_l(model: &SurfaceModel, cluster: &EigenspaceCluster, f: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    let lam = cluster.lambda;
    let fv = model.eval(f);
    let gv = model.eval(g);
    let grad = model.grad_dot(f, g);
    let mut out = DVector::zeros(model.node_count());
    for j in 0..out.len() {
        out[j] = 2.0 * (lam * lam * fv[j] * gv[j] - lam * grad[j] / cluster.factor.values[j]);
    }
    out
}

/// `M_σ`-norm of the component of `f` orthogonal to the cluster.
pub fn span_residual(cluster: &EigenspaceCluster, f: &DVector<f64>) -> f64 {
    let coords = cluster.basis.transpose() * (&cluster.mass * f);
    let r = f - &cluster.basis * coords;
    r.dot(&(&cluster.mass * &r)).max(0.0).sqrt()
}

fn check_length(model: &SurfaceModel, f: &DVector<f64>) -> Result<()> {
    if f.len() != model.dim() {
        return Err(Error::LengthMismatch {
            expected: model.dim(),
            got: f.len(),
        });
    }
    Ok(())
}

/// Gram matrix of the first-variation form on a cluster.
#[derive(Clone, Debug)]
pub struct HadamardGram {
    /// `½ ∫ [f_a Δ_g~ f_b + f_b Δ_g~ f_a] Δ_g~ φ v_g~`.
    pub matrix: DMatrix<f64>,
    /// `λ ∫ f_a f_b Δ_g~ φ v_g~`, equal to `matrix` on an exact eigenspace.
    pub eigenspace_form: DMatrix<f64>,
    pub direction: KahlerPotential,
    pub lambda: f64,
}

impl HadamardGram {
    /// Ascending eigenvalues of `matrix`.
    pub fn spectrum(&self) -> Vec<f64> {
        sorted_eigenvalues(&self.matrix)
    }

    /// Largest entry of `|matrix - eigenspace_form|`.
    pub fn consistency_gap(&self) -> f64 {
        (&self.matrix - &self.eigenspace_form).amax()
    }
}

pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn hadamard_gram(model: &SurfaceModel, cluster: &EigenspaceCluster, direction: &KahlerPotential) -> Result<HadamardGram> {
    let dir = model.potential_coeffs(direction)?;
    if cluster.basis.nrows() != model.dim() {
        return Err(Error::LengthMismatch {
            expected: model.dim(),
            got: cluster.basis.nrows(),
        });
    }
    let d = cluster.dim();
    let lap_phi = model.laplacian(&dir);
    let w = model.weights();
    let es = &cluster.factor.values;
    let vals: Vec<DVector<f64>> = (0..d).map(|a| model.eval(&cluster.member(a))).collect();
    let laps: Vec<DVector<f64>> = (0..d).map(|a| model.laplacian(&cluster.member(a))).collect();

    let mut matrix = DMatrix::zeros(d, d);
    let mut eigen_form = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            let mut sym = 0.0;
            let mut eig = 0.0;
            for j in 0..model.node_count() {
                // Δ_g~ = e^{-σ} Δ_g and v_g~ = e^σ v_g.
                sym += w[j] * (vals[a][j] * laps[b][j] + vals[b][j] * laps[a][j]) * lap_phi[j] / es[j];
                eig += w[j] * vals[a][j] * vals[b][j] * lap_phi[j];
            }
            matrix[(a, b)] = 0.5 * sym;
            matrix[(b, a)] = 0.5 * sym;
            eigen_form[(a, b)] = cluster.lambda * eig;
            eigen_form[(b, a)] = cluster.lambda * eig;
        }
    }
    Ok(HadamardGram {
        matrix,
        eigenspace_form: eigen_form,
        direction: direction.clone(),
        lambda: cluster.lambda,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeReport {
    pub k: usize,
    pub lambda: f64,
    pub cluster_dim: usize,
    /// Ascending eigenvalues of the Hadamard Gram matrix.
    pub gram_spectrum: Vec<f64>,
    /// Richardson-extrapolated `d/dt λ_k` at `t = 0-`.
    pub fd_left: f64,
    /// Richardson-extrapolated `d/dt λ_k` at `t = 0+`.
    pub fd_right: f64,
    pub extremal_sign_product: f64,
    /// Right derivatives of all cluster branches, ascending.
    pub right_branches: Vec<f64>,
    /// Left derivatives of all cluster branches, ascending.
    pub left_branches: Vec<f64>,
    pub gram_trace: f64,
    /// Finite-difference derivative of the cluster sum of eigenvalues.
    pub fd_trace: f64,
    /// Largest mismatch between sorted branch derivatives and the Gram
    /// spectrum.
    pub max_mismatch: f64,
    pub tolerance: f64,
    pub contract_holds: bool,
    /// Steps actually used (after any shrinking).
    pub steps: Vec<f64>,
}

/// Compare Richardson one-sided differences of the eigenvalue branches
/// through cluster `k` with the Hadamard Gram spectrum.
pub fn eigenvalue_derivatives(
    model: &SurfaceModel,
    base: &KahlerPotential,
    k: usize,
    direction: &KahlerPotential,
    steps: &[f64],
    cluster_tol: f64,
) -> Result<DerivativeReport> {
    if steps.is_empty() {
        return Err(Error::InvalidInput("empty step list".into()));
    }
    let n = model.dim();
    let factor0 = model.conformal_factor(base)?;
    let spec0 = solve_with_factor(model, base.clone(), factor0.clone(), n)?;
    let cl = cluster(&spec0, k, cluster_tol)?;
    let gram = hadamard_gram(model, &cl, direction)?;
    let gram_spectrum = gram.spectrum();
    let d = cl.dim();
    let lambda = cl.lambda;
    let tolerance = 1e-4 * (1.0 + lambda.abs());

    let branch = k - cl.k;
    if direction.is_zero() {
        return Ok(DerivativeReport {
            k,
            lambda,
            cluster_dim: d,
            gram_spectrum,
            fd_left: 0.0,
            fd_right: 0.0,
            extremal_sign_product: 0.0,
            right_branches: vec![0.0; d],
            left_branches: vec![0.0; d],
            gram_trace: 0.0,
            fd_trace: 0.0,
            max_mismatch: 0.0,
            tolerance,
            contract_holds: true,
            steps: steps.to_vec(),
        });
    }

    let lap_dir = model.laplacian(&model.potential_coeffs(direction)?);
    let steps = admissible_steps(&factor0, &lap_dir, steps)?;
    let steps = gap_limited_steps(&spec0.eigenvalues, cl.k, d, &factor0, &lap_dir, steps);

    let at = |t: f64| -> Result<Vec<f64>> {
        let values = &factor0.values - &lap_dir * t;
        let spec = solve_with_factor(model, base.axpy(t, direction), ConformalFactor { values }, n)?;
        Ok(spec.eigenvalues[cl.k..cl.k + d].to_vec())
    };
    let ts: Vec<f64> = steps.iter().flat_map(|&h| [h, -h]).collect();
    let shifted = map_maybe_parallel(&ts, |&t| at(t))?;

    let base_vals = &spec0.eigenvalues[cl.k..cl.k + d];
    let mut right = Vec::with_capacity(d);
    let mut left = Vec::with_capacity(d);
    for i in 0..d {
        let r: Vec<f64> = steps
            .iter()
            .enumerate()
            .map(|(s, &h)| (shifted[2 * s][i] - base_vals[i]) / h)
            .collect();
        let l: Vec<f64> = steps
            .iter()
            .enumerate()
            .map(|(s, &h)| (base_vals[i] - shifted[2 * s + 1][i]) / h)
            .collect();
        right.push(richardson(&steps, &r));
        left.push(richardson(&steps, &l));
    }
    let (fd_right, fd_left) = (right[branch], left[branch]);
    let fd_trace: f64 = right.iter().sum();
    let gram_trace = gram.matrix.trace();
    let mut right_sorted = right.clone();
    right_sorted.sort_by(f64::total_cmp);
    let mut left_sorted = left.clone();
    left_sorted.sort_by(f64::total_cmp);
    let max_mismatch = gram_spectrum
        .iter()
        .zip(right_sorted.iter().zip(&left_sorted))
        .map(|(g, (r, l))| (g - r).abs().max((g - l).abs()))
        .fold(0.0, f64::max);
    let contract_holds = max_mismatch <= tolerance && (fd_trace - gram_trace).abs() <= tolerance;

    Ok(DerivativeReport {
        k,
        lambda,
        cluster_dim: d,
        gram_spectrum,
        fd_left,
        fd_right,
        extremal_sign_product: fd_left * fd_right,
        right_branches: right_sorted,
        left_branches: left_sorted,
        gram_trace,
        fd_trace,
        max_mismatch,
        tolerance,
        contract_holds,
        steps,
    })
}

/// Halve the steps until `e^σ ∓ h Δφ_dir` stays positive, down to
/// [`STEP_FLOOR`].
fn admissible_steps(factor: &ConformalFactor, lap_dir: &DVector<f64>, steps: &[f64]) -> Result<Vec<f64>> {
    let hmax = steps.iter().fold(0.0f64, |a, &h| a.max(h.abs()));
    let worst = factor
        .values
        .iter()
        .zip(lap_dir.iter())
        .map(|(&e, &l)| (e - POSITIVITY_FLOOR) / l.abs().max(f64::MIN_POSITIVE))
        .fold(f64::INFINITY, f64::min);
    let mut scale = 1.0;
    while hmax * scale >= 0.5 * worst {
        scale *= 0.5;
        if hmax * scale < STEP_FLOOR {
            return Err(Error::InadmissibleStep { floor: STEP_FLOOR });
        }
    }
    Ok(steps.iter().map(|h| h.abs() * scale).collect())
}

/// Keep the largest step well inside the analyticity radius of the branches:
/// every branch slope is bounded by `λ · max|Δ_g φ_dir / e^σ|`, so two
/// branches cannot meet before `t ~ gap / ((λ_lo + λ_hi) κ)`.
fn gap_limited_steps(
    eigenvalues: &[f64],
    start: usize,
    d: usize,
    factor: &ConformalFactor,
    lap_dir: &DVector<f64>,
    steps: Vec<f64>,
) -> Vec<f64> {
    let kappa = lap_dir
        .iter()
        .zip(factor.values.iter())
        .map(|(l, e)| (l / e).abs())
        .fold(0.0, f64::max);
    let end = start + d;
    let mut limit = f64::INFINITY;
    if start > 1 {
        let (lo, hi) = (eigenvalues[start - 1], eigenvalues[start]);
        limit = limit.min((hi - lo) / ((lo + hi) * kappa));
    }
    if end < eigenvalues.len() {
        let (lo, hi) = (eigenvalues[end - 1], eigenvalues[end]);
        limit = limit.min((hi - lo) / ((lo + hi) * kappa));
    }
    let limit = GAP_STEP_FRACTION * limit;
    let hmax = steps.iter().fold(0.0f64, |a, &h| a.max(h));
    if hmax <= limit || !limit.is_finite() {
        return steps;
    }
    let scale = limit / hmax;
    steps.into_iter().map(|h| h * scale).collect()
}

/// Richardson tableau for `D(h) = D + c_1 h + c_2 h² + …`; returns the most
/// extrapolated entry.
pub fn richardson(steps: &[f64], values: &[f64]) -> f64 {
    let n = values.len();
    let mut table: Vec<Vec<f64>> = vec![values.to_vec()];
    for j in 1..n {
        let prev = &table[j - 1];
        let mut row = Vec::with_capacity(n - j);
        for i in j..n {
            // Neville extrapolation to h = 0.
            let factor = steps[i] / (steps[i - j] - steps[i]);
            row.push(prev[i - j + 1] + (prev[i - j + 1] - prev[i - j]) * factor);
        }
        table.push(row);
    }
    *table.last().and_then(|r| r.last()).expect("non-empty tableau")
}

#[cfg(feature = "parallel")]
pub(crate) fn map_maybe_parallel<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_maybe_parallel<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    F: Fn(&T) -> Result<U>,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{solve_spectrum, DEFAULT_CLUSTER_TOL};
    use crate::surface::{Mode, Parity, SurfaceKind};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn sphere_l1(l_max: usize) -> (SurfaceModel, EigenspaceCluster) {
        let m = SurfaceModel::new(SurfaceKind::unit_sphere(), l_max).unwrap();
        let spec = solve_spectrum(&m, &KahlerPotential::zero(&m), m.dim()).unwrap();
        let c = cluster(&spec, 1, DEFAULT_CLUSTER_TOL).unwrap();
        (m, c)
    }

    /// Full coefficients of the unnormalized coordinate function `z`, `x`, `y`.
    fn coordinate(m: &SurfaceModel, order: i64) -> DVector<f64> {
        let idx = m
            .modes()
            .iter()
            .position(|&md| md == Mode::Harmonic { degree: 1, order })
            .unwrap();
        let mut c = DVector::zeros(m.dim());
        c[idx] = (4.0 * PI / 3.0).sqrt();
        c
    }

    #[test]
    fn l_of_z_on_round_sphere() {
        let (m, c) = sphere_l1(6);
        let z = coordinate(&m, 0);
        let l = l_on_eigenspace(&m, &c, &z).unwrap();
        for (j, p) in m.coords().iter().enumerate() {
            let zz = p[0].cos();
            assert_relative_eq!(l[j], 12.0 * zz * zz - 4.0, epsilon = 1e-11);
        }
        let total: f64 = [-1, 0, 1]
            .iter()
            .map(|&o| l_on_eigenspace(&m, &c, &coordinate(&m, o)).unwrap())
            .fold(DVector::zeros(m.node_count()), |acc, v| acc + v)
            .amax();
        assert!(total < 1e-11);
    }

    #[test]
    fn l_rejects_functions_outside_cluster() {
        let (m, c) = sphere_l1(6);
        let mut f = coordinate(&m, 0);
        f[5] = 0.1;
        assert!(matches!(l_on_eigenspace(&m, &c, &f), Err(Error::NotInClusterSpan { .. })));
    }

    #[test]
    fn l_has_zero_mean_on_rectangular_torus() {
        let m = SurfaceModel::new(SurfaceKind::rectangular_torus(), 4).unwrap();
        let spec = solve_spectrum(&m, &KahlerPotential::zero(&m), m.dim()).unwrap();
        let c = cluster(&spec, 1, DEFAULT_CLUSTER_TOL).unwrap();
        let idx = m
            .modes()
            .iter()
            .position(|&md| md == Mode::Fourier { n1: 0, n2: 1, parity: Parity::Cos })
            .unwrap();
        let mut f = DVector::zeros(m.dim());
        f[idx] = 1.0;
        let l = l_on_eigenspace(&m, &c, &f).unwrap();
        let mean = m.integrate(&l, Some(&c.factor)).unwrap();
        assert!(mean.abs() < 1e-12);
        // L(cos(y/2)·c) = c²/8 · cos y with c² = 2/area.
        let c2 = 2.0 / m.area();
        for (j, p) in m.coords().iter().enumerate() {
            assert_relative_eq!(l[j], c2 / 8.0 * p[1].cos(), epsilon = 1e-13);
        }
    }

    #[test]
    fn gram_vanishes_for_degree_one_direction() {
        let (m, c) = sphere_l1(6);
        for idx in 1..4 {
            let g = hadamard_gram(&m, &c, &KahlerPotential::single_mode(&m, idx, 0.3)).unwrap();
            assert!(g.matrix.amax() < 1e-12, "{}", g.matrix);
        }
    }

    #[test]
    fn gram_for_y20_is_traceless() {
        let (m, c) = sphere_l1(6);
        // Y_20 has basis index 6.
        let g = hadamard_gram(&m, &c, &KahlerPotential::single_mode(&m, 6, 0.2)).unwrap();
        assert!(g.matrix.trace().abs() < 1e-12);
        assert!(g.matrix.amax() > 1e-3);
        assert!(g.consistency_gap() < 1e-12);
    }

    #[test]
    fn zero_direction_gives_zero_gram_and_derivatives() {
        let (m, c) = sphere_l1(4);
        let g = hadamard_gram(&m, &c, &KahlerPotential::zero(&m)).unwrap();
        assert_eq!(g.matrix.amax(), 0.0);
        let r = eigenvalue_derivatives(&m, &KahlerPotential::zero(&m), 1, &KahlerPotential::zero(&m), &DEFAULT_STEPS, DEFAULT_CLUSTER_TOL)
            .unwrap();
        assert_eq!((r.fd_left, r.fd_right), (0.0, 0.0));
    }

    #[test]
    fn round_sphere_is_extremal_along_y20() {
        let m = SurfaceModel::new(SurfaceKind::unit_sphere(), 8).unwrap();
        let dir = KahlerPotential::single_mode(&m, 6, 0.2);
        let r = eigenvalue_derivatives(&m, &KahlerPotential::zero(&m), 1, &dir, &[1e-3, 1e-4], DEFAULT_CLUSTER_TOL).unwrap();
        assert!(r.extremal_sign_product <= 0.0, "{r:?}");
        assert!(r.gram_spectrum[0] <= 0.0 && *r.gram_spectrum.last().unwrap() >= 0.0);
        assert!(r.contract_holds, "{r:?}");
    }

    #[test]
    fn gram_is_linear_in_direction() {
        let (m, c) = sphere_l1(6);
        let a = KahlerPotential::single_mode(&m, 6, 0.2);
        let b = KahlerPotential::single_mode(&m, 11, -0.4);
        let ga = hadamard_gram(&m, &c, &a).unwrap().matrix;
        let gb = hadamard_gram(&m, &c, &b).unwrap().matrix;
        let gab = hadamard_gram(&m, &c, &a.scaled(2.0).axpy(3.0, &b)).unwrap().matrix;
        assert!((gab - ga * 2.0 - gb * 3.0).amax() < 1e-12);
    }

    #[test]
    fn richardson_removes_linear_and_quadratic_terms() {
        let steps = [1e-2, 5e-3, 2.5e-3];
        let vals: Vec<f64> = steps.iter().map(|h| 3.0 + 2.0 * h - 7.0 * h * h).collect();
        assert_relative_eq!(richardson(&steps, &vals), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn step_shrinks_near_positivity_boundary() {
        let m = SurfaceModel::new(SurfaceKind::unit_sphere(), 6).unwrap();
        let y10 = m.basis().column(2).amax();
        // Base factor min ≈ 0.1, steep direction.
        let base = KahlerPotential::single_mode(&m, 2, 0.9 / (2.0 * y10));
        let dir = KahlerPotential::single_mode(&m, 2, 100.0);
        let r = eigenvalue_derivatives(&m, &base, 1, &dir, &[1e-3], DEFAULT_CLUSTER_TOL);
        match r {
            Ok(rep) => assert!(rep.steps[0] < 1e-3),
            Err(e) => panic!("{e}"),
        }
    }
}
