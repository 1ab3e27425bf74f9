//! Spectral Galerkin models of closed surfaces and the conformal,
//! volume-preserving deformations `g~ = (1 - Δφ) g` that make up a Kähler
//! class in real dimension two.
//!
//! Two backgrounds are supported:
//!
//! * the round sphere of radius `r`, with real spherical harmonics up to
//!   degree `l_max` and a Gauss–Legendre × uniform-azimuth product grid of
//!   `(l_max + 1) × (2 l_max + 2)` nodes;
//! * a flat torus `R² / Λ`, with real Fourier modes `|n|_∞ <= l_max` and a
//!   uniform `(4 l_max + 2)²` grid.
//!
//! Both quadratures integrate every product of two basis functions exactly,
//! so the basis is orthonormal to machine precision and the stiffness matrix
//! is the closed-form diagonal of Laplace eigenvalues.
//!
//! Basis ordering (stable, also used for potentials on disk):
//! * sphere: by `(degree, order)` with `order` running `-l..=l`; negative
//!   orders are the `sin(|m| ϕ)` harmonics;
//! * torus: the constant first, then half-plane indices `(n1, n2)` with
//!   `n1 > 0` or `n1 == 0 && n2 > 0` in lexicographic order, `cos` before
//!   `sin`.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Conformal factors at or below this value are treated as a degenerate
/// metric rather than roundoff.
pub const POSITIVITY_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub enum SurfaceKind {
    RoundSphere { radius: f64 },
    /// Flat torus spanned by the two lattice vectors `lattice[0]`, `lattice[1]`.
    FlatTorus { lattice: [[f64; 2]; 2] },
}

impl SurfaceKind {
    pub fn unit_sphere() -> Self {
        SurfaceKind::RoundSphere { radius: 1.0 }
    }

    pub fn square_torus() -> Self {
        SurfaceKind::FlatTorus {
            lattice: [[2.0 * PI, 0.0], [0.0, 2.0 * PI]],
        }
    }

    /// The `2π × 4π` rectangle.
    pub fn rectangular_torus() -> Self {
        SurfaceKind::FlatTorus {
            lattice: [[2.0 * PI, 0.0], [0.0, 4.0 * PI]],
        }
    }

    /// Hexagonal lattice with side `2π`.
    pub fn equilateral_torus() -> Self {
        SurfaceKind::FlatTorus {
            lattice: [[2.0 * PI, 0.0], [PI, 3f64.sqrt() * PI]],
        }
    }

    pub fn is_sphere(&self) -> bool {
        matches!(self, SurfaceKind::RoundSphere { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parity {
    Cos,
    Sin,
}

/// Label of one real basis function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Harmonic { degree: usize, order: i64 },
    Fourier { n1: i64, n2: i64, parity: Parity },
}

impl Mode {
    /// Spherical-harmonic degree or `|n|_∞` for Fourier modes.
    pub fn degree(&self) -> usize {
        match *self {
            Mode::Harmonic { degree, .. } => degree,
            Mode::Fourier { n1, n2, .. } => n1.unsigned_abs().max(n2.unsigned_abs()) as usize,
        }
    }
}

/// Zero-mean potential φ, stored without the constant mode.
#[derive(Clone, Debug, PartialEq)]
pub struct KahlerPotential {
    pub coeffs: DVector<f64>,
}

impl KahlerPotential {
    pub fn zero(model: &SurfaceModel) -> Self {
        Self {
            coeffs: DVector::zeros(model.dim() - 1),
        }
    }

    pub fn from_vec(coeffs: Vec<f64>) -> Self {
        Self {
            coeffs: DVector::from_vec(coeffs),
        }
    }

    /// Potential with a single nonzero coefficient on basis function `index`
    /// (`index >= 1`, since the constant is excluded).
    pub fn single_mode(model: &SurfaceModel, index: usize, value: f64) -> Self {
        assert!(index >= 1 && index < model.dim(), "mode index out of range");
        let mut phi = Self::zero(model);
        phi.coeffs[index - 1] = value;
        phi
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self {
            coeffs: &self.coeffs * t,
        }
    }

    /// `self + t * other`
    pub fn axpy(&self, t: f64, other: &KahlerPotential) -> Self {
        Self {
            coeffs: &self.coeffs + &other.coeffs * t,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }
}

/// Samples of `e^σ = 1 - Δ_g φ` at the quadrature nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ConformalFactor {
    pub values: DVector<f64>,
}

impl ConformalFactor {
    pub fn identity(model: &SurfaceModel) -> Self {
        Self {
            values: DVector::from_element(model.node_count(), 1.0),
        }
    }

    pub fn min(&self) -> f64 {
        self.values.min()
    }
}

/// A discretized surface: basis, quadrature, and closed-form stiffness.
/// Immutable after construction.
#[derive(Clone, Debug)]
pub struct SurfaceModel {
    kind: SurfaceKind,
    l_max: usize,
    area: f64,
    modes: Vec<Mode>,
    coords: Vec<[f64; 2]>,
    weights: DVector<f64>,
    basis: DMatrix<f64>,
    grad: [DMatrix<f64>; 2],
    laplace: DVector<f64>,
}

impl SurfaceModel {
    pub fn new(kind: SurfaceKind, l_max: usize) -> Result<Self> {
        if l_max < 2 {
            return Err(Error::TruncationTooSmall(l_max));
        }
        Self::build(kind, l_max)
    }

    /// Same as [`SurfaceModel::new`] but without the `l_max >= 2` guard;
    /// used for tiny illustrative models and internally for refinements.
    pub fn with_truncation(kind: SurfaceKind, l_max: usize) -> Result<Self> {
        Self::build(kind, l_max)
    }

    fn build(kind: SurfaceKind, l_max: usize) -> Result<Self> {
        match kind {
            SurfaceKind::RoundSphere { radius } => {
                if !(radius.is_finite() && radius > 0.0) {
                    return Err(Error::InvalidModel(format!("sphere radius {radius}")));
                }
                Ok(build_sphere(radius, l_max))
            }
            SurfaceKind::FlatTorus { lattice } => {
                let det = lattice_det(&lattice);
                let scale = norm2(lattice[0]) * norm2(lattice[1]);
                if !det.is_finite() || det.abs() <= 1e-12 * scale || scale == 0.0 {
                    return Err(Error::DegenerateLattice { det });
                }
                Ok(build_torus(lattice, l_max))
            }
        }
    }

    pub fn kind(&self) -> &SurfaceKind {
        &self.kind
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Number of basis functions.
    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    /// Area of the background metric.
    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    /// Native node coordinates: `(θ, ϕ)` on the sphere, `(x, y)` on the torus.
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Basis functions at nodes, `node_count × dim`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Gradient components of the basis in an orthonormal frame of the
    /// background metric.
    pub fn grad(&self) -> &[DMatrix<f64>; 2] {
        &self.grad
    }

    /// Diagonal of the stiffness matrix: Laplace eigenvalue of each mode.
    pub fn laplace_eigenvalues(&self) -> &DVector<f64> {
        &self.laplace
    }

    pub fn stiffness(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.laplace)
    }

    /// `∫ ∇b_a·∇b_b v_g` by quadrature; equals [`Self::stiffness`] up to
    /// roundoff.
    pub fn stiffness_by_quadrature(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.dim(), self.dim());
        for g in &self.grad {
            let wg = weighted_rows(g, &self.weights);
            s += g.transpose() * wg;
        }
        s
    }

    /// `(M_σ)_ab = ∫ b_a b_b e^σ v_g` by quadrature.
    pub fn mass_matrix(&self, factor: Option<&ConformalFactor>) -> DMatrix<f64> {
        let w = match factor {
            Some(f) => self.weights.component_mul(&f.values),
            None => self.weights.clone(),
        };
        let wb = weighted_rows(&self.basis, &w);
        let mut m = self.basis.transpose() * wb;
        m = (&m + m.transpose()) * 0.5;
        m
    }

    /// Index of each mode, for embedding coefficients between truncations.
    pub fn mode_index(&self) -> HashMap<Mode, usize> {
        self.modes.iter().enumerate().map(|(i, m)| (*m, i)).collect()
    }

    /// Full coefficient vector (constant mode = 0) of a potential.
    pub fn potential_coeffs(&self, phi: &KahlerPotential) -> Result<DVector<f64>> {
        if phi.coeffs.len() + 1 != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim() - 1,
                got: phi.coeffs.len(),
            });
        }
        let mut c = DVector::zeros(self.dim());
        c.rows_mut(1, self.dim() - 1).copy_from(&phi.coeffs);
        Ok(c)
    }

    /// Evaluate a function given by full basis coefficients at the nodes.
    pub fn eval(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.basis * coeffs
    }

    /// `Δ_g u` at the nodes, applied modewise.
    pub fn laplacian(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.basis * coeffs.component_mul(&self.laplace)
    }

    /// `|∇u|²_g` at the nodes.
    pub fn grad_sq(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        let g0 = &self.grad[0] * coeffs;
        let g1 = &self.grad[1] * coeffs;
        g0.component_mul(&g0) + g1.component_mul(&g1)
    }

    /// `∇u·∇v` (background metric) at the nodes.
    pub fn grad_dot(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = (&self.grad[0] * u).component_mul(&(&self.grad[0] * v));
        out += (&self.grad[1] * u).component_mul(&(&self.grad[1] * v));
        out
    }

    /// Quadrature inner product against the background (or deformed) volume.
    pub fn inner(
        &self,
        u: &DVector<f64>,
        v: &DVector<f64>,
        factor: Option<&ConformalFactor>,
    ) -> f64 {
        let mut acc = 0.0;
        match factor {
            Some(f) => {
                for j in 0..u.len() {
                    acc += self.weights[j] * f.values[j] * u[j] * v[j];
                }
            }
            None => {
                for j in 0..u.len() {
                    acc += self.weights[j] * u[j] * v[j];
                }
            }
        }
        acc
    }

    /// Basis values at arbitrary native coordinates (no gradients).
    pub fn basis_at(&self, coords: &[[f64; 2]]) -> DMatrix<f64> {
        match self.kind {
            SurfaceKind::RoundSphere { radius } => sphere_basis(radius, self.l_max, coords).0,
            SurfaceKind::FlatTorus { lattice } => {
                torus_basis(&lattice, &self.modes, self.area, coords).0
            }
        }
    }

    /// A model of the same surface at a different truncation.
    pub fn refined(&self, l_max: usize) -> Result<Self> {
        Self::with_truncation(self.kind.clone(), l_max)
    }

    /// Map full coefficients of this model into the basis of `target`.
    /// Modes absent from `target` must carry zero coefficients.
    pub fn embed_coeffs(&self, coeffs: &DVector<f64>, target: &SurfaceModel) -> Result<DVector<f64>> {
        if target.kind != self.kind {
            return Err(Error::InvalidModel("embedding across different surfaces".into()));
        }
        let index = target.mode_index();
        let mut out = DVector::zeros(target.dim());
        for (i, mode) in self.modes.iter().enumerate() {
            match index.get(mode) {
                Some(&j) => out[j] = coeffs[i],
                None if coeffs[i] == 0.0 => {}
                None => {
                    return Err(Error::InvalidModel(format!(
                        "mode {mode:?} is not resolved by the target model"
                    )))
                }
            }
        }
        Ok(out)
    }

    /// `Δ_g (Σ u_i²)` at the nodes, computed spectrally on a model of twice
    /// the truncation, which represents the squares exactly.
    pub fn laplacian_of_sum_of_squares(&self, fs: &[DVector<f64>]) -> Result<DVector<f64>> {
        self.laplacian_of_quadratic(fs, |fine, fs| {
            let mut sq = DVector::zeros(fine.node_count());
            for f in fs {
                let vals = fine.eval(f);
                sq += vals.component_mul(&vals);
            }
            sq
        })
    }

    /// `Δ_g q` at the nodes for a quadratic expression `q` of the inputs.
    /// `q` receives the doubled-truncation model and the embedded
    /// coefficients, and returns samples at that model's nodes.
    pub fn laplacian_of_quadratic<F>(&self, fs: &[DVector<f64>], q: F) -> Result<DVector<f64>>
    where
        F: Fn(&SurfaceModel, &[DVector<f64>]) -> DVector<f64>,
    {
        let fine = self.refined(2 * self.l_max)?;
        let embedded = fs
            .iter()
            .map(|f| self.embed_coeffs(f, &fine))
            .collect::<Result<Vec<_>>>()?;
        let samples = q(&fine, &embedded);
        let coeffs = weighted_rows(&fine.basis, &fine.weights).transpose() * samples;
        let lap = coeffs.component_mul(&fine.laplace);
        Ok(fine.basis_at(&self.coords) * lap)
    }

    /// Largest `(t_lo, t_hi)` such that `1 - t Δφ > POSITIVITY_FLOOR` at
    /// every node.
    pub fn admissible_ray(&self, phi: &KahlerPotential) -> Result<(f64, f64)> {
        let lap = self.laplacian(&self.potential_coeffs(phi)?);
        Ok(ray_bounds(&lap))
    }

    /// `e^σ = 1 - Δ_g φ` at the nodes.
    pub fn conformal_factor(&self, phi: &KahlerPotential) -> Result<ConformalFactor> {
        let lap = self.laplacian(&self.potential_coeffs(phi)?);
        let values = lap.map(|v| 1.0 - v);
        let (node, min_value) = values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        if min_value <= POSITIVITY_FLOOR || !min_value.is_finite() {
            let (t_lo, t_hi) = ray_bounds(&lap);
            return Err(Error::NotPositive {
                min_value,
                node,
                t_lo,
                t_hi,
            });
        }
        Ok(ConformalFactor { values })
    }

    /// `Σ_j w_j s_j (e^σ)_j`, i.e. `∫ s v_g` or `∫ s v_g~`.
    pub fn integrate(&self, samples: &DVector<f64>, factor: Option<&ConformalFactor>) -> Result<f64> {
        if samples.len() != self.node_count() {
            return Err(Error::LengthMismatch {
                expected: self.node_count(),
                got: samples.len(),
            });
        }
        if let Some(f) = factor {
            if f.values.len() != self.node_count() {
                return Err(Error::LengthMismatch {
                    expected: self.node_count(),
                    got: f.values.len(),
                });
            }
        }
        let ones = DVector::from_element(samples.len(), 1.0);
        Ok(self.inner(samples, &ones, factor))
    }
}

fn ray_bounds(lap: &DVector<f64>) -> (f64, f64) {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let room = 1.0 - POSITIVITY_FLOOR;
    for &d in lap.iter() {
        if d > 0.0 {
            hi = hi.min(room / d);
        } else if d < 0.0 {
            lo = lo.max(room / d);
        }
    }
    (lo, hi)
}

/// `diag(w) * m`
pub(crate) fn weighted_rows(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= w[i];
    }
    out
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn lattice_det(l: &[[f64; 2]; 2]) -> f64 {
    l[0][0] * l[1][1] - l[0][1] * l[1][0]
}

/// Gauss–Legendre nodes (descending) and weights on `[-1, 1]`.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        xs.push(x);
        ws.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    (xs, ws)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    (p1, nf * (x * p1 - p0) / (x * x - 1.0))
}

/// Fully normalized associated Legendre functions `P̄_l^m(cos θ)` (no
/// Condon–Shortley phase, `∫_{-1}^{1} P̄² = 1/(2π)`) and their θ-derivatives,
/// indexed `[l][m]`.
fn normalized_legendre(l_max: usize, x: f64, s: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut p = vec![vec![0.0; l_max + 1]; l_max + 1];
    p[0][0] = 1.0 / (4.0 * PI).sqrt();
    for m in 1..=l_max {
        let mf = m as f64;
        p[m][m] = ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s * p[m - 1][m - 1];
    }
    for m in 0..l_max {
        p[m + 1][m] = (2.0 * m as f64 + 3.0).sqrt() * x * p[m][m];
    }
    for m in 0..=l_max {
        for l in (m + 2)..=l_max {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            p[l][m] = a * (x * p[l - 1][m] - b * p[l - 2][m]);
        }
    }
    let mut dp = vec![vec![0.0; l_max + 1]; l_max + 1];
    for l in 0..=l_max {
        for m in 0..=l {
            let (lf, mf) = (l as f64, m as f64);
            let lower = if l > m {
                ((2.0 * lf + 1.0) * (lf * lf - mf * mf) / (2.0 * lf - 1.0)).sqrt() * p[l - 1][m]
            } else {
                0.0
            };
            dp[l][m] = (lf * x * p[l][m] - lower) / s;
        }
    }
    (p, dp)
}

fn sphere_modes(l_max: usize) -> Vec<Mode> {
    let mut modes = Vec::with_capacity((l_max + 1) * (l_max + 1));
    for l in 0..=l_max {
        for m in -(l as i64)..=(l as i64) {
            modes.push(Mode::Harmonic {
                degree: l,
                order: m,
            });
        }
    }
    modes
}

type BasisEval = (DMatrix<f64>, [DMatrix<f64>; 2]);

fn sphere_basis(radius: f64, l_max: usize, coords: &[[f64; 2]]) -> BasisEval {
    let dim = (l_max + 1) * (l_max + 1);
    let n = coords.len();
    let mut vals = DMatrix::zeros(n, dim);
    let mut g_theta = DMatrix::zeros(n, dim);
    let mut g_phi = DMatrix::zeros(n, dim);
    let sqrt2 = 2f64.sqrt();
    let r2 = radius * radius;
    for (j, &[theta, phi]) in coords.iter().enumerate() {
        let (x, s) = (theta.cos(), theta.sin());
        let (p, dp) = normalized_legendre(l_max, x, s);
        let mut col = 0;
        for l in 0..=l_max {
            for m in -(l as i64)..=(l as i64) {
                let mu = m.unsigned_abs() as usize;
                let muf = mu as f64;
                let (ang, dang) = if m > 0 {
                    let a = muf * phi;
                    (sqrt2 * a.cos(), -sqrt2 * muf * a.sin())
                } else if m < 0 {
                    let a = muf * phi;
                    (sqrt2 * a.sin(), sqrt2 * muf * a.cos())
                } else {
                    (1.0, 0.0)
                };
                vals[(j, col)] = p[l][mu] * ang / radius;
                g_theta[(j, col)] = dp[l][mu] * ang / r2;
                g_phi[(j, col)] = p[l][mu] * dang / (s * r2);
                col += 1;
            }
        }
    }
    (vals, [g_theta, g_phi])
}

fn build_sphere(radius: f64, l_max: usize) -> SurfaceModel {
    let n_theta = l_max + 1;
    let n_phi = 2 * l_max + 2;
    let (xs, ws) = gauss_legendre(n_theta);
    let dphi = 2.0 * PI / n_phi as f64;
    let mut coords = Vec::with_capacity(n_theta * n_phi);
    let mut weights = Vec::with_capacity(n_theta * n_phi);
    for (x, w) in xs.iter().zip(&ws) {
        let theta = x.clamp(-1.0, 1.0).acos();
        for k in 0..n_phi {
            coords.push([theta, k as f64 * dphi]);
            weights.push(w * dphi * radius * radius);
        }
    }
    let modes = sphere_modes(l_max);
    let laplace = DVector::from_iterator(
        modes.len(),
        modes.iter().map(|m| {
            let l = m.degree() as f64;
            l * (l + 1.0) / (radius * radius)
        }),
    );
    let (basis, grad) = sphere_basis(radius, l_max, &coords);
    SurfaceModel {
        kind: SurfaceKind::RoundSphere { radius },
        l_max,
        area: 4.0 * PI * radius * radius,
        modes,
        coords,
        weights: DVector::from_vec(weights),
        basis,
        grad,
        laplace,
    }
}

fn torus_modes(l_max: usize) -> Vec<Mode> {
    let l = l_max as i64;
    let mut modes = vec![Mode::Fourier {
        n1: 0,
        n2: 0,
        parity: Parity::Cos,
    }];
    for n1 in -l..=l {
        for n2 in -l..=l {
            if n1 > 0 || (n1 == 0 && n2 > 0) {
                for parity in [Parity::Cos, Parity::Sin] {
                    modes.push(Mode::Fourier { n1, n2, parity });
                }
            }
        }
    }
    modes
}

/// Dual lattice vectors `b_i` with `b_i · a_j = δ_ij`.
fn dual_basis(l: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = lattice_det(l);
    [
        [l[1][1] / det, -l[1][0] / det],
        [-l[0][1] / det, l[0][0] / det],
    ]
}

fn wave_vector(dual: &[[f64; 2]; 2], n1: i64, n2: i64) -> [f64; 2] {
    let (a, b) = (n1 as f64, n2 as f64);
    [
        2.0 * PI * (a * dual[0][0] + b * dual[1][0]),
        2.0 * PI * (a * dual[0][1] + b * dual[1][1]),
    ]
}

fn torus_basis(lattice: &[[f64; 2]; 2], modes: &[Mode], area: f64, coords: &[[f64; 2]]) -> BasisEval {
    let dual = dual_basis(lattice);
    let n = coords.len();
    let mut vals = DMatrix::zeros(n, modes.len());
    let mut gx = DMatrix::zeros(n, modes.len());
    let mut gy = DMatrix::zeros(n, modes.len());
    let c0 = 1.0 / area.sqrt();
    let c = (2.0 / area).sqrt();
    for (col, mode) in modes.iter().enumerate() {
        let Mode::Fourier { n1, n2, parity } = *mode else {
            unreachable!("torus model with non-Fourier mode")
        };
        if n1 == 0 && n2 == 0 {
            for j in 0..n {
                vals[(j, col)] = c0;
            }
            continue;
        }
        let k = wave_vector(&dual, n1, n2);
        for (j, &[x, y]) in coords.iter().enumerate() {
            let (s, co) = (k[0] * x + k[1] * y).sin_cos();
            let (v, d) = match parity {
                Parity::Cos => (co, -s),
                Parity::Sin => (s, co),
            };
            vals[(j, col)] = c * v;
            gx[(j, col)] = c * d * k[0];
            gy[(j, col)] = c * d * k[1];
        }
    }
    (vals, [gx, gy])
}

fn build_torus(lattice: [[f64; 2]; 2], l_max: usize) -> SurfaceModel {
    let area = lattice_det(&lattice).abs();
    let n = 4 * l_max + 2;
    let mut coords = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (s1, s2) = (i as f64 / n as f64, j as f64 / n as f64);
            coords.push([
                s1 * lattice[0][0] + s2 * lattice[1][0],
                s1 * lattice[0][1] + s2 * lattice[1][1],
            ]);
        }
    }
    let weights = DVector::from_element(n * n, area / (n * n) as f64);
    let modes = torus_modes(l_max);
    let dual = dual_basis(&lattice);
    let laplace = DVector::from_iterator(
        modes.len(),
        modes.iter().map(|m| match *m {
            Mode::Fourier { n1, n2, .. } => {
                let k = wave_vector(&dual, n1, n2);
                k[0] * k[0] + k[1] * k[1]
            }
            Mode::Harmonic { .. } => unreachable!(),
        }),
    );
    let (basis, grad) = torus_basis(&lattice, &modes, area, &coords);
    SurfaceModel {
        kind: SurfaceKind::FlatTorus { lattice },
        l_max,
        area,
        modes,
        coords,
        weights,
        basis,
        grad,
        laplace,
    }
}
