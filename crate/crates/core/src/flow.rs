//! `λ_1` ascent over admissible potentials.
//!
//! At each state the band of eigenvalues near `λ_1` is collected and, for a
//! fixed basis of directions `φ_j`, the first-order perturbation matrices
//! `G_j` of that band are assembled. The ascent direction `Σ c_j φ_j`
//! maximizes `λ_min(Σ c_j G_j)` over `‖c‖ ≤ 1`; by minimax this equals
//! `min_B ‖(⟨B, G_j⟩)_j‖` over the spectrahedron, which is the same quadratic
//! problem the certificate solves. The step is chosen by Armijo backtracking
//! on the true `λ_1`, keeping the conformal factor positive.
//!
//! The area of `e^σ g` does not depend on `φ`, so maximizing `λ_1` maximizes
//! `λ_1 · Area` in the Kähler class.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectrahedron::{bottom_eigenpair, QuadraticOverSpectrahedron, SolverOptions};
use crate::spectral::{solve_spectrum, SpectralData, DEFAULT_CLUSTER_TOL};
use crate::surface::{KahlerPotential, SurfaceModel, POSITIVITY_FLOOR};

#[derive(Clone, Copy, Debug)]
pub struct FlowOptions {
    pub max_steps: usize,
    /// Stop once the max-min directional derivative is at or below this.
    pub tol: f64,
    /// Eigenvalues within `λ_1 (1 + band)` join the band.
    pub band: f64,
    /// Stationarity is tested on band prefixes whose spread is at most
    /// `λ_1 · stationarity_band`.
    pub stationarity_band: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub initial_step: f64,
    /// Highest direction degree; `None` means `L_max / 2`.
    pub direction_degree: Option<usize>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            max_steps: 200,
            tol: 1e-6,
            band: 0.1,
            stationarity_band: 1e-3,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
            initial_step: 0.1,
            direction_degree: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StopReason {
    /// Max-min directional derivative fell to `tol`.
    Stationary,
    MaxSteps,
    /// Backtracking found no admissible step with sufficient increase.
    NoAdmissibleStep,
}

#[derive(Clone, Debug, Serialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub lambda1_area: f64,
    pub step_size: f64,
    pub cluster_dim: usize,
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub phi: KahlerPotential,
    pub lambda1: f64,
    pub area: f64,
    /// Accepted states, starting with `φ_0` at step 0.
    pub history: Vec<HistoryEntry>,
    pub stop: StopReason,
    /// Last max-min directional derivative.
    pub slope: f64,
}

impl FlowState {
    pub fn steps(&self) -> usize {
        self.history.len() - 1
    }

    pub fn lambda1_area(&self) -> f64 {
        self.lambda1 * self.area
    }
}

/// Best ascent direction for the band at one state.
#[derive(Clone, Debug)]
pub struct AscentDirection {
    /// Coefficients on the direction basis, unit norm (zero when stationary).
    pub coeffs: DVector<f64>,
    /// `λ_min(Σ c_j G_j)`.
    pub slope: f64,
    pub band_dim: usize,
}

/// Full-vector indices of the direction basis: every mode of degree
/// `1..=max_degree`.
pub fn direction_basis(model: &SurfaceModel, max_degree: usize) -> Vec<usize> {
    model
        .modes()
        .iter()
        .enumerate()
        .filter(|(_, m)| (1..=max_degree).contains(&m.degree()))
        .map(|(i, _)| i)
        .collect()
}

struct Directions {
    indices: Vec<usize>,
    /// Column `j`: `w ⊙ Δ_g φ_j` at the nodes.
    weighted_laplacians: DMatrix<f64>,
}

impl Directions {
    fn new(model: &SurfaceModel, max_degree: usize) -> Self {
        let indices = direction_basis(model, max_degree);
        let mut weighted_laplacians = DMatrix::zeros(model.node_count(), indices.len());
        for (j, &i) in indices.iter().enumerate() {
            let col = model.basis().column(i) * model.laplace_eigenvalues()[i];
            weighted_laplacians.set_column(j, &col.component_mul(model.weights()));
        }
        Self {
            indices,
            weighted_laplacians,
        }
    }

    fn potential(&self, model: &SurfaceModel, c: &DVector<f64>) -> KahlerPotential {
        let mut v = vec![0.0; model.dim() - 1];
        for (j, &i) in self.indices.iter().enumerate() {
            v[i - 1] = c[j];
        }
        KahlerPotential::from_vec(v)
    }
}

/// Number of leading eigenvalues within the band above `λ_1`.
fn band_dim(spec: &SpectralData, band: f64) -> Result<usize> {
    let l1 = spec.lambda1();
    let mut end = 1;
    while end < spec.len() && spec.eigenvalues[end] <= l1 * (1.0 + band) {
        end += 1;
    }
    if end == spec.len() || !spec.is_trusted(end - 1) {
        return Err(Error::UntrustedCluster {
            index: end - 1,
            lambda: spec.eigenvalues[end - 1],
            trusted_below: spec.trusted_below,
        });
    }
    Ok(end - 1)
}

/// Perturbation matrices `G_j[a,b] = √(λ_a λ_b) ∫ f_a f_b Δ_g φ_j v_g` of the
/// band, one per direction. For a simple eigenvalue `G_j` is the derivative
/// along `φ_j`; for a degenerate one its spectrum gives the one-sided
/// derivatives.
fn band_perturbations(model: &SurfaceModel, spec: &SpectralData, d: usize, dirs: &Directions) -> Vec<DMatrix<f64>> {
    let f = model.basis() * spec.eigvecs.columns(1, d);
    let s: Vec<f64> = (1..=d).map(|a| spec.eigenvalues[a].sqrt()).collect();
    (0..dirs.indices.len())
        .map(|j| {
            let w = dirs.weighted_laplacians.column(j);
            let mut g = DMatrix::zeros(d, d);
            for a in 0..d {
                let fw = f.column(a).component_mul(&w);
                for b in a..d {
                    let v = s[a] * s[b] * fw.dot(&f.column(b));
                    g[(a, b)] = v;
                    g[(b, a)] = v;
                }
            }
            g
        })
        .collect()
}

/// `argmax_{‖c‖ ≤ 1} λ_min(Σ c_j G_j)`.
pub fn max_min_direction(gs: &[DMatrix<f64>]) -> AscentDirection {
    let n = gs.len();
    let d = gs.first().map_or(0, |g| g.nrows());
    if n == 0 || d == 0 {
        return AscentDirection {
            coeffs: DVector::zeros(n),
            slope: 0.0,
            band_dim: d,
        };
    }
    // atoms: row j is vec(G_j), so A vec(B) = (⟨B, G_j⟩)_j
    let mut atoms = DMatrix::zeros(n, d * d);
    for (j, g) in gs.iter().enumerate() {
        for b in 0..d {
            for a in 0..d {
                atoms[(j, a + d * b)] = g[(a, b)];
            }
        }
    }
    let scale = gs.iter().map(|g| g.amax()).fold(0.0, f64::max);
    let sol = QuadraticOverSpectrahedron::from_atom_matrix(d, &atoms).minimize(&SolverOptions {
        max_iters: 300,
        target_residual: 0.0,
        gap_tol: (1e-12 * scale.max(1e-300)).powi(2),
    });
    let mut bvec = DVector::zeros(d * d);
    for b in 0..d {
        for a in 0..d {
            bvec[a + d * b] = sol.b[(a, b)];
        }
    }
    let g = &atoms * bvec;
    let norm = g.norm();
    if norm <= 1e-14 * scale.max(1e-300) {
        return AscentDirection {
            coeffs: DVector::zeros(n),
            slope: 0.0,
            band_dim: d,
        };
    }
    let c = g / norm;
    let mut pencil = DMatrix::zeros(d, d);
    for (j, gj) in gs.iter().enumerate() {
        pencil += gj * c[j];
    }
    let (slope, _) = bottom_eigenpair(&pencil);
    AscentDirection {
        coeffs: c,
        slope,
        band_dim: d,
    }
}

/// Largest `t` keeping `e^σ - t Δ_g ψ` above the positivity floor.
fn max_positive_step(model: &SurfaceModel, factor: &DVector<f64>, psi: &KahlerPotential) -> Result<f64> {
    let lap = model.laplacian(&model.potential_coeffs(psi)?);
    let mut t = f64::INFINITY;
    for (e, l) in factor.iter().zip(lap.iter()) {
        if *l > 0.0 {
            t = t.min((e - POSITIVITY_FLOOR) / l);
        }
    }
    Ok(t)
}

fn n_eigs(model: &SurfaceModel) -> usize {
    model.dim().min(16)
}

/// Ascent direction at `phi`.
pub fn ascent_direction(model: &SurfaceModel, phi: &KahlerPotential, opts: &FlowOptions) -> Result<(AscentDirection, KahlerPotential)> {
    let dirs = Directions::new(model, opts.direction_degree.unwrap_or(model.l_max() / 2));
    let spec = solve_spectrum(model, phi, n_eigs(model))?;
    let d = band_dim(&spec, opts.band)?;
    let dir = max_min_direction(&band_perturbations(model, &spec, d, &dirs));
    let psi = dirs.potential(model, &dir.coeffs);
    Ok((dir, psi))
}

/// Prefix sizes of the band that end at a spectral gap, ascending; the
/// full band is always last.
fn band_prefixes(spec: &SpectralData, d: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..d)
        .filter(|&k| spec.eigenvalues[k + 1] - spec.eigenvalues[k] > DEFAULT_CLUSTER_TOL * spec.eigenvalues[k])
        .collect();
    out.push(d);
    out
}

/// Dimension of the `λ_1` cluster at the default clustering tolerance.
fn lambda1_multiplicity(spec: &SpectralData, d: usize) -> usize {
    band_prefixes(spec, d)[0]
}

struct Trial {
    phi: KahlerPotential,
    spec: SpectralData,
    band: usize,
    t: f64,
}

/// Armijo backtracking along `psi` from `phi`.
fn line_search(
    model: &SurfaceModel,
    phi: &KahlerPotential,
    spec: &SpectralData,
    psi: &KahlerPotential,
    slope: f64,
    t0: f64,
    opts: &FlowOptions,
) -> Result<Option<Trial>> {
    let t_max = max_positive_step(model, &spec.factor.values, psi)?;
    let mut t = t0.min(0.5 * t_max);
    let l1 = spec.lambda1();
    for _ in 0..=opts.max_backtracks {
        let trial = phi.axpy(t, psi);
        if let Ok(s) = solve_spectrum(model, &trial, spec.len()) {
            if s.lambda1() >= l1 + opts.armijo * t * slope {
                if let Ok(band) = band_dim(&s, opts.band) {
                    return Ok(Some(Trial {
                        phi: trial,
                        spec: s,
                        band,
                        t,
                    }));
                }
            }
        }
        t *= opts.backtrack;
    }
    Ok(None)
}

/// Maximize `λ_1` starting from `phi0`.
///
/// Stationarity is judged on the nearly degenerate prefixes of the band.
/// Each step tries the ascent
/// direction of every gap-bounded prefix of the band (the `λ_1` cluster
/// alone, the cluster plus the next one, ...) and keeps the best accepted
/// step: when the band is split the small prefixes move fast, and near a
/// multiple eigenvalue only the full band sees the nonsmooth structure.
pub fn ascend(model: &SurfaceModel, phi0: &KahlerPotential, opts: &FlowOptions) -> Result<FlowState> {
    let dirs = Directions::new(model, opts.direction_degree.unwrap_or(model.l_max() / 2));
    let area = model.area();
    let mut phi = phi0.clone();
    let mut spec = solve_spectrum(model, &phi, n_eigs(model))?;
    let mut d = band_dim(&spec, opts.band)?;
    let mut history = vec![HistoryEntry {
        step: 0,
        lambda1_area: spec.lambda1() * area,
        step_size: 0.0,
        cluster_dim: lambda1_multiplicity(&spec, d),
    }];
    let mut step_size = opts.initial_step;
    let mut slope;
    let stop = loop {
        let gs = band_perturbations(model, &spec, d, &dirs);
        let l1 = spec.lambda1();
        let candidates: Vec<(usize, AscentDirection)> = band_prefixes(&spec, d)
            .into_iter()
            .map(|k| {
                let sub: Vec<DMatrix<f64>> = gs.iter().map(|g| g.view((0, 0), (k, k)).into_owned()).collect();
                (k, max_min_direction(&sub))
            })
            .collect();
        slope = candidates
            .iter()
            .filter(|(k, _)| spec.eigenvalues[*k] - l1 <= opts.stationarity_band * l1)
            .map(|(_, dir)| dir.slope)
            .fold(f64::INFINITY, f64::min);
        if slope <= opts.tol {
            break StopReason::Stationary;
        }
        if history.len() > opts.max_steps {
            break StopReason::MaxSteps;
        }
        let mut best: Option<Trial> = None;
        for (_, dir) in candidates.iter().filter(|(_, dir)| dir.slope > opts.tol) {
            let psi = dirs.potential(model, &dir.coeffs);
            if let Some(trial) = line_search(model, &phi, &spec, &psi, dir.slope, 2.0 * step_size, opts)? {
                if best.as_ref().is_none_or(|b| trial.spec.lambda1() > b.spec.lambda1()) {
                    best = Some(trial);
                }
            }
        }
        let Some(trial) = best else {
            break StopReason::NoAdmissibleStep;
        };
        phi = trial.phi;
        spec = trial.spec;
        d = trial.band;
        step_size = trial.t;
        history.push(HistoryEntry {
            step: history.len(),
            lambda1_area: spec.lambda1() * area,
            step_size: trial.t,
            cluster_dim: lambda1_multiplicity(&spec, d),
        });
    };
    Ok(FlowState {
        phi,
        lambda1: spec.lambda1(),
        area,
        history,
        stop,
        slope,
    })
}
