//! Riemannian products `A × B` of Kähler surfaces, handled through factor
//! data only.
//!
//! Formula sheet for `F = f ⊗ h` on `(A × B, g_A + g_B)`:
//!
//! * `Δ(f ⊗ h) = (Δ_A f) ⊗ h + f ⊗ (Δ_B h)`, so the spectrum is
//!   `{λ + μ}` with multiplicities multiplied;
//! * `|∇(f ⊗ 1)|² = |∇_A f|² ⊗ 1` and `∇(f ⊗ 1) ⊥ ∇(1 ⊗ h)`;
//! * `dd^c(f ⊗ 1) = (dd^c_A f) ⊗ 1`, a form on the `A` factor, orthogonal to
//!   every form coming from `B`;
//! * on a surface, for `f ∈ E_λ`, `|dd^c f|² = (Δ f)² = λ² f²`.
//!
//! With `L(F) = λ² F² - 2λ |∇F|² + |dd^c F|²` this gives, for the
//! `L²`-normalized constant `c_B = Area(B)^{-1/2}`,
//!
//! * `L(f ⊗ c_B) = c_B² L_A(f) ⊗ 1`,
//! * `Λ(f ⊗ c_B, c_A ⊗ h) = λ² c_A c_B f ⊗ h` (mixed terms vanish),
//!
//! so a certificate `Σ L_A(f_i) = 0` lifts to `Σ L(f_i ⊗ c_B) = 0`, and in
//! general the lifted residual is `res_A / √Area(B)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::certificate::{polarize, ExtremalityCertificate, PolarizedL, Verdict};
use crate::error::{Error, Result};
use crate::spectral::{cluster, cluster_summaries, solve_spectrum, EigenspaceCluster, SpectralData};
use crate::surface::{KahlerPotential, SurfaceModel};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Level {
    pub value: f64,
    pub multiplicity: usize,
    /// Factor level indices `(i, j)` with `value = A_i + B_j`; empty for
    /// factor spectra.
    pub components: Vec<(usize, usize)>,
}

/// Eigenvalues with multiplicities, complete strictly below `complete_below`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbstractSpectrum {
    pub levels: Vec<Level>,
    pub area: f64,
    pub complete_below: f64,
}

impl AbstractSpectrum {
    /// A single point: spectrum `{0}`, area 1, the unit of the product.
    pub fn point() -> Self {
        Self {
            levels: vec![Level {
                value: 0.0,
                multiplicity: 1,
                components: vec![],
            }],
            area: 1.0,
            complete_below: f64::INFINITY,
        }
    }

    pub fn from_levels(levels: &[(f64, usize)], area: f64, complete_below: f64) -> Result<Self> {
        let ok = levels.first().is_some_and(|l| l.0 == 0.0 && l.1 == 1)
            && levels.windows(2).all(|w| w[0].0 < w[1].0)
            && levels.iter().all(|l| l.1 > 0);
        if !ok || !(area > 0.0) {
            return Err(Error::InvalidInput(
                "levels must ascend from a simple zero with positive multiplicities".into(),
            ));
        }
        Ok(Self {
            levels: levels
                .iter()
                .map(|&(value, multiplicity)| Level {
                    value,
                    multiplicity,
                    components: vec![],
                })
                .collect(),
            area,
            complete_below,
        })
    }

    /// Resolved clusters of a computed spectrum.
    pub fn from_spectral(spec: &SpectralData, area: f64, tol: f64) -> Self {
        let mut levels = vec![Level {
            value: 0.0,
            multiplicity: 1,
            components: vec![],
        }];
        let mut end = 1;
        for c in cluster_summaries(spec, tol) {
            end = c.k + c.dim;
            levels.push(Level {
                value: c.lambda,
                multiplicity: c.dim,
                components: vec![],
            });
        }
        let first_missing = if end < spec.len() {
            spec.eigenvalues[end]
        } else {
            spec.next_eigenvalue.unwrap_or(f64::INFINITY)
        };
        Self {
            levels,
            area,
            complete_below: first_missing.min(spec.trusted_below),
        }
    }

    /// Spectrum of `model` at potential `phi`, from its lowest `n_eigs` pairs.
    pub fn from_model(model: &SurfaceModel, phi: &KahlerPotential, n_eigs: usize, tol: f64) -> Result<Self> {
        let spec = solve_spectrum(model, phi, n_eigs)?;
        // ∫ e^σ v_g = ∫ (1 - Δφ) v_g = Area(g)
        Ok(Self::from_spectral(&spec, model.area(), tol))
    }

    pub fn lambda1(&self) -> Option<f64> {
        self.levels.get(1).map(|l| l.value)
    }

    /// Eigenvalues repeated by multiplicity.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.levels
            .iter()
            .flat_map(|l| std::iter::repeat_n(l.value, l.multiplicity))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.levels.iter().map(|l| l.multiplicity).sum()
    }
}

/// Lowest `n` eigenvalues (whole levels) of `A × B`.
pub fn product_spectrum(a: &AbstractSpectrum, b: &AbstractSpectrum, n: usize, tol: f64) -> Result<AbstractSpectrum> {
    // λ + μ < bound forces λ < bound and μ < bound, so both lists are
    // complete there.
    let bound = a.complete_below.min(b.complete_below);
    let mut sums: Vec<(f64, usize, usize, usize)> = Vec::new();
    for (i, la) in a.levels.iter().enumerate() {
        for (j, lb) in b.levels.iter().enumerate() {
            let v = la.value + lb.value;
            if v < bound {
                sums.push((v, la.multiplicity * lb.multiplicity, i, j));
            }
        }
    }
    sums.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.2.cmp(&y.2)));
    let mut levels: Vec<Level> = Vec::new();
    for (v, m, i, j) in sums {
        match levels.last_mut() {
            Some(last) if v - last.value <= tol * last.value.abs().max(f64::MIN_POSITIVE) => {
                let total = last.multiplicity + m;
                last.value = (last.value * last.multiplicity as f64 + v * m as f64) / total as f64;
                last.multiplicity = total;
                last.components.push((i, j));
            }
            _ => levels.push(Level {
                value: v,
                multiplicity: m,
                components: vec![(i, j)],
            }),
        }
    }
    let mut kept = Vec::new();
    let mut count = 0;
    for l in levels {
        if count >= n {
            break;
        }
        count += l.multiplicity;
        kept.push(l);
    }
    if count < n {
        return Err(Error::DepthExceedsTrust {
            needed: bound,
            trusted_below: bound,
        });
    }
    Ok(AbstractSpectrum {
        levels: kept,
        area: a.area * b.area,
        complete_below: bound,
    })
}

/// One surface factor with its resolved `λ_1` cluster.
#[derive(Clone, Debug)]
pub struct SurfaceFactor {
    pub model: SurfaceModel,
    pub cluster: EigenspaceCluster,
    /// `Area(e^σ g)`.
    pub area: f64,
}

impl SurfaceFactor {
    pub fn new(model: SurfaceModel, phi: &KahlerPotential, n_eigs: usize, tol: f64) -> Result<Self> {
        let spec = solve_spectrum(&model, phi, n_eigs)?;
        let cluster = cluster(&spec, 1, tol)?;
        let area = model.area();
        Ok(Self { model, cluster, area })
    }

    pub fn lambda1(&self) -> f64 {
        self.cluster.lambda
    }

    /// `L²(v_g~)`-normalized constant.
    pub fn unit_constant(&self) -> f64 {
        self.area.sqrt().recip()
    }

    fn weights(&self) -> DVector<f64> {
        self.model.weights().component_mul(&self.cluster.factor.values)
    }
}

/// Samples of `u(x) v(y)` at product nodes `x_i + n_A · y_j`.
fn tensor(u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let na = u.len();
    DVector::from_fn(na * v.len(), |k, _| u[k % na] * v[k / na])
}

/// Polarized `L` on the `λ_1` cluster of `A × B`: the `f_a ⊗ c_B` block,
/// followed by the `c_A ⊗ h_b` block when `λ_1(B) = λ_1(A)` within `tol`.
/// Requires `λ_1(B) ≥ λ_1(A)`.
pub fn product_polarized(a: &SurfaceFactor, b: &SurfaceFactor, tol: f64) -> Result<PolarizedL> {
    let (la, lb) = (a.lambda1(), b.lambda1());
    let same = (lb - la).abs() <= tol * la;
    if lb < la && !same {
        return Err(Error::LiftRefused { first: la, second: lb });
    }
    let pa = polarize(&a.model, &a.cluster);
    let da = pa.dim();
    let ones_a = DVector::from_element(a.model.node_count(), 1.0);
    let ones_b = DVector::from_element(b.model.node_count(), 1.0);
    let (ca2, cb2) = (a.area.recip(), b.area.recip());

    let pb = same.then(|| polarize(&b.model, &b.cluster));
    let db = pb.as_ref().map_or(0, PolarizedL::dim);
    let d = da + db;
    let lambda = if same { 0.5 * (la + lb) } else { la };
    let mut entries = vec![DVector::zeros(0); d * d];
    for i in 0..da {
        for j in 0..da {
            entries[i + d * j] = tensor(&(pa.entry(i, j) * cb2), &ones_b);
        }
    }
    if let Some(pb) = &pb {
        let fa: Vec<DVector<f64>> = (0..da).map(|i| a.model.eval(&a.cluster.member(i))).collect();
        let hb: Vec<DVector<f64>> = (0..db).map(|j| b.model.eval(&b.cluster.member(j))).collect();
        let mixed = lambda * lambda * (ca2 * cb2).sqrt();
        for i in 0..db {
            for j in 0..db {
                entries[(da + i) + d * (da + j)] = tensor(&ones_a, &(pb.entry(i, j) * ca2));
            }
        }
        for i in 0..da {
            for j in 0..db {
                let v = tensor(&fa[i], &hb[j]) * mixed;
                entries[(da + j) + d * i] = v.clone();
                entries[i + d * (da + j)] = v;
            }
        }
    }
    Ok(PolarizedL::from_entries(
        d,
        lambda,
        tensor(&a.weights(), &b.weights()),
        entries,
        Some(1),
    ))
}

/// `Σ L(f_i ⊗ c_B)` on the product grid, evaluated term by term from
/// `λ² F² - 2λ |∇F|² + |dd^c F|²` with factor gradients and Laplacians.
pub fn lifted_l_samples(a: &SurfaceFactor, b: &SurfaceFactor, functions: &[DVector<f64>]) -> DVector<f64> {
    let lambda = a.lambda1();
    let inv_factor = a.cluster.factor.values.map(f64::recip);
    let mut acc = DVector::zeros(a.model.node_count());
    for f in functions {
        let v = a.model.eval(f);
        let grad2 = a.model.grad_sq(f).component_mul(&inv_factor);
        let lap = a.model.laplacian(f).component_mul(&inv_factor);
        acc += v.component_mul(&v) * (lambda * lambda) - grad2 * (2.0 * lambda) + lap.component_mul(&lap);
    }
    let cb2 = b.area.recip();
    tensor(&(acc * cb2), &DVector::from_element(b.model.node_count(), 1.0))
}

#[derive(Clone, Debug)]
pub struct LiftedCertificate {
    /// Certificate on the product `λ_1` cluster.
    pub certificate: ExtremalityCertificate,
    /// Dimension of the product `λ_1` cluster.
    pub cluster_dim: usize,
    /// Residual of the factor certificate.
    pub factor_residual: f64,
    /// `factor_residual / √Area(B)`.
    pub predicted_residual: f64,
    /// Residual from term-by-term evaluation of `Σ L(f_i ⊗ c_B)`.
    pub term_residual: f64,
}

/// Lift a certificate on `A` to `A × B` through `f_i ↦ f_i ⊗ c_B`.
pub fn lift_certificate(cert: &ExtremalityCertificate, a: &SurfaceFactor, b: &SurfaceFactor, tol: f64) -> Result<LiftedCertificate> {
    if cert.verdict != Verdict::CertifiedExtremal {
        return Err(Error::InvalidInput("only a certified factor can be lifted".into()));
    }
    if cert.functions.is_empty() {
        return Err(Error::EmptyCertificate);
    }
    let lam = product_polarized(a, b, tol)?;
    let d = lam.dim();
    let da = a.cluster.dim();
    if cert.b.nrows() != da {
        return Err(Error::LengthMismatch {
            expected: da,
            got: cert.b.nrows(),
        });
    }
    let mut bp = DMatrix::zeros(d, d);
    bp.view_mut((0, 0), (da, da)).copy_from(&cert.b);
    let combined = lam.combine(&bp);
    let residual = lam.norm(&combined);

    let fs: Vec<DVector<f64>> = cert.functions.iter().map(|c| &a.cluster.basis * c).collect();
    let term = lifted_l_samples(a, b, &fs);
    let term_residual = lam.norm(&term);

    let functions = cert
        .functions
        .iter()
        .map(|c| {
            let mut v = DVector::zeros(d);
            v.rows_mut(0, da).copy_from(c);
            v
        })
        .collect();
    let tolerance = cert.tolerance;
    let certified = residual <= tolerance;
    Ok(LiftedCertificate {
        certificate: ExtremalityCertificate {
            verdict: if certified {
                Verdict::CertifiedExtremal
            } else {
                Verdict::NotCertified
            },
            b: bp,
            residual,
            tolerance,
            functions,
            inconclusive: false,
            witness: (!certified).then_some(combined),
            witness_margin: None,
            sufficient: true,
            duality_gap: cert.duality_gap,
            iterations: 0,
            history: vec![residual * residual],
        },
        cluster_dim: d,
        factor_residual: cert.residual,
        predicted_residual: cert.residual / b.area.sqrt(),
        term_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::{certify, CertifyOptions};
    use crate::spectral::DEFAULT_CLUSTER_TOL;
    use crate::surface::SurfaceKind;

    const TOL: f64 = DEFAULT_CLUSTER_TOL;

    fn factor(kind: SurfaceKind, l: usize) -> SurfaceFactor {
        let m = SurfaceModel::new(kind, l).unwrap();
        let phi = KahlerPotential::zero(&m);
        SurfaceFactor::new(m, &phi, 16, TOL).unwrap()
    }

    fn spectrum(kind: SurfaceKind, l: usize) -> AbstractSpectrum {
        let m = SurfaceModel::new(kind, l).unwrap();
        let phi = KahlerPotential::zero(&m);
        AbstractSpectrum::from_model(&m, &phi, m.dim(), TOL).unwrap()
    }

    #[test]
    fn sphere_squared_spectrum() {
        let s = spectrum(SurfaceKind::unit_sphere(), 8);
        let p = product_spectrum(&s, &s, 20, TOL).unwrap();
        assert!((p.levels[1].value - 2.0).abs() < 1e-10);
        assert_eq!(p.levels[1].multiplicity, 6);
        // 4 = 2 + 2 with multiplicity 9; 6 = 6 + 0 twice with 5 each
        assert!((p.levels[2].value - 4.0).abs() < 1e-10);
        assert_eq!(p.levels[2].multiplicity, 9);
        assert_eq!(p.levels[3].multiplicity, 10);
        assert!((p.area - 16.0 * std::f64::consts::PI.powi(2)).abs() < 1e-9);
    }

    #[test]
    fn square_torus_squared_spectrum() {
        let t = spectrum(SurfaceKind::square_torus(), 6);
        let p = product_spectrum(&t, &t, 9, TOL).unwrap();
        assert!((p.levels[1].value - 1.0).abs() < 1e-10);
        assert_eq!(p.levels[1].multiplicity, 8);
    }

    #[test]
    fn point_is_the_unit() {
        let s = spectrum(SurfaceKind::unit_sphere(), 6);
        let n = s.count();
        let p = product_spectrum(&s, &AbstractSpectrum::point(), n, TOL).unwrap();
        assert_eq!(p.eigenvalues().len(), s.eigenvalues().len());
        for (x, y) in p.eigenvalues().iter().zip(s.eigenvalues()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(p.area, s.area);
    }

    #[test]
    fn depth_beyond_trust_is_refused() {
        let s = spectrum(SurfaceKind::unit_sphere(), 4);
        assert!(matches!(
            product_spectrum(&s, &s, 10_000, TOL),
            Err(Error::DepthExceedsTrust { .. })
        ));
    }

    #[test]
    fn invalid_levels_are_rejected() {
        assert!(AbstractSpectrum::from_levels(&[(1.0, 1)], 1.0, 10.0).is_err());
        assert!(AbstractSpectrum::from_levels(&[(0.0, 1), (2.0, 3), (1.0, 1)], 1.0, 10.0).is_err());
        assert!(AbstractSpectrum::from_levels(&[(0.0, 1), (2.0, 3)], 4.0, 10.0).is_ok());
    }

    #[test]
    fn sphere_certificate_lifts_to_sphere_squared() {
        let a = factor(SurfaceKind::unit_sphere(), 6);
        let cert = certify(&polarize(&a.model, &a.cluster), &CertifyOptions::default()).unwrap();
        let lifted = lift_certificate(&cert, &a, &a, TOL).unwrap();
        assert_eq!(lifted.cluster_dim, 6);
        assert!(lifted.certificate.residual <= 1e-7);
        assert!(lifted.term_residual <= 1e-7);
        assert_eq!(lifted.certificate.verdict, Verdict::CertifiedExtremal);
        // the full product cluster is also certified on its own
        let full = certify(&product_polarized(&a, &a, TOL).unwrap(), &CertifyOptions::default()).unwrap();
        assert_eq!(full.verdict, Verdict::CertifiedExtremal);
    }

    #[test]
    fn lift_to_larger_first_eigenvalue_stays_on_first_block() {
        let a = factor(SurfaceKind::RoundSphere { radius: 2.0 }, 6);
        let b = factor(SurfaceKind::unit_sphere(), 6);
        let lam = product_polarized(&a, &b, TOL).unwrap();
        assert_eq!(lam.dim(), 3);
        let cert = certify(&polarize(&a.model, &a.cluster), &CertifyOptions::default()).unwrap();
        let lifted = lift_certificate(&cert, &a, &b, TOL).unwrap();
        assert!(lifted.certificate.residual <= 1e-7);
        // refused the other way round
        let cert_b = certify(&polarize(&b.model, &b.cluster), &CertifyOptions::default()).unwrap();
        assert!(matches!(lift_certificate(&cert_b, &b, &a, TOL), Err(Error::LiftRefused { .. })));
    }

    #[test]
    fn term_by_term_matches_polarized_route_for_uncertified_input() {
        // A single function: residual scales as 1/√Area(B).
        let a = factor(SurfaceKind::unit_sphere(), 6);
        let b = factor(SurfaceKind::square_torus(), 4);
        let single = EigenspaceCluster {
            basis: a.cluster.basis.columns(0, 1).into_owned(),
            ..a.cluster.clone()
        };
        let lam_a = polarize(&a.model, &single);
        let res_a = lam_a.norm(lam_a.entry(0, 0));
        let f = a.cluster.member(0);
        let term = lifted_l_samples(&a, &b, &[f]);
        let w = tensor(&a.weights(), &b.weights());
        let norm = (term.component_mul(&term).dot(&w)).sqrt();
        assert!((norm - res_a / b.area.sqrt()).abs() < 1e-10 * res_a);
    }

    #[test]
    fn mixed_entries_are_lambda_squared_products() {
        let a = factor(SurfaceKind::unit_sphere(), 4);
        let lam = product_polarized(&a, &a, TOL).unwrap();
        assert_eq!(lam.dim(), 6);
        let f0 = a.model.eval(&a.cluster.member(0));
        let h1 = a.model.eval(&a.cluster.member(1));
        let expected = tensor(&f0, &h1) * (4.0 / a.area);
        assert!((lam.entry(0, 4) - expected).amax() < 1e-12);
        assert_eq!(lam.entry(0, 4), lam.entry(4, 0));
    }
}
