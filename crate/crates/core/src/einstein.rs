//! Kähler–Einstein criteria: `λ_1` is extremal iff the zero-mean part of
//! `Σ f_i²` is itself a (possibly zero) `λ_1`-eigenfunction.
//!
//! Two realizations live here:
//!
//! * the unit round sphere, numerically, where `λ_1 = Scal = 2`;
//! * toric manifolds, exactly. In momentum coordinates `x` the first
//!   eigenfunctions are affine, `f = (u, x) + λ`, and `Σ f_i²` is affine only
//!   when its quadratic part `Q = Σ u_i u_iᵀ` vanishes, which forces every
//!   `u_i = 0`. The same affine-square pattern closes the argument for
//!   orthotoric and related metrics; no polytope data is needed.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::EigenspaceCluster;
use crate::surface::SurfaceModel;
use crate::variation::span_residual;

/// `λ_1` of the normalized sphere must match 2 within this for the numeric
/// criterion.
pub const KE_LAMBDA_TOL: f64 = 1e-6;
/// Tolerance on `λ_1 = 2` when checking the pointwise identities.
pub const KE_LAMBDA_STRICT_TOL: f64 = 1e-8;
/// Node-level tolerance for the pointwise identities.
pub const IDENTITY_TOL: f64 = 1e-6;

/// `x ↦ (u, x) + lam` with exact rational data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffineFunction {
    #[serde(with = "rational_vec")]
    pub u: Vec<BigRational>,
    #[serde(with = "rational")]
    pub lam: BigRational,
}

impl AffineFunction {
    pub fn new(u: Vec<BigRational>, lam: BigRational) -> Self {
        Self { u, lam }
    }

    pub fn from_ints(u: &[i64], lam: i64) -> Self {
        Self {
            u: u.iter().map(|&v| int(v)).collect(),
            lam: int(lam),
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.u.iter().all(Zero::is_zero)
    }
}

/// Exact expansion of `Σ ((u_i, x) + λ_i)²` as `xᵀQx + (l, x) + c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuadraticExpansion {
    pub q: Vec<Vec<BigRational>>,
    pub linear: Vec<BigRational>,
    pub constant: BigRational,
}

impl QuadraticExpansion {
    pub fn quadratic_is_zero(&self) -> bool {
        self.q.iter().flatten().all(Zero::is_zero)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ToricVerdict {
    /// `Σ f_i²` is affine. This happens only when every `f_i` is constant,
    /// so the criterion has only trivial solutions.
    AffineSum {
        u: Vec<BigRational>,
        lam: BigRational,
        only_trivial: bool,
    },
    /// `Σ f_i²` has a nonzero quadratic part `Q`; the criterion fails.
    NotAffine { q: Vec<Vec<BigRational>> },
}

impl ToricVerdict {
    pub fn name(&self) -> &'static str {
        match self {
            ToricVerdict::AffineSum { .. } => "AffineSum",
            ToricVerdict::NotAffine { .. } => "NotAffine",
        }
    }
}

impl fmt::Display for ToricVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToricVerdict::AffineSum { u, lam, only_trivial } => {
                write!(f, "AffineSum(u = {}, lam = {lam})", join(u))?;
                if *only_trivial {
                    write!(f, ", only trivial solutions")?;
                }
                Ok(())
            }
            ToricVerdict::NotAffine { q } => {
                let rows: Vec<String> = q.iter().map(|r| join(r)).collect();
                write!(f, "NotAffine(Q = [{}]): criterion unsatisfiable with non-trivial functions", rows.join(", "))
            }
        }
    }
}

fn join(v: &[BigRational]) -> String {
    let parts: Vec<String> = v.iter().map(ToString::to_string).collect();
    format!("[{}]", parts.join(", "))
}

fn int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Exact expansion of the sum of squares.
pub fn expand_sum_of_squares(fs: &[AffineFunction]) -> Result<QuadraticExpansion> {
    let m = fs
        .first()
        .ok_or_else(|| Error::InvalidInput("at least one affine function is required".into()))?
        .u
        .len();
    let zero = BigRational::zero();
    let mut q = vec![vec![zero.clone(); m]; m];
    let mut linear = vec![zero.clone(); m];
    let mut constant = zero;
    for f in fs {
        if f.u.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                got: f.u.len(),
            });
        }
        for i in 0..m {
            if f.u[i].is_zero() {
                continue;
            }
            for j in 0..m {
                q[i][j] += &f.u[i] * &f.u[j];
            }
            linear[i] += int(2) * &f.u[i] * &f.lam;
        }
        constant += &f.lam * &f.lam;
    }
    Ok(QuadraticExpansion { q, linear, constant })
}

/// Decide whether `Σ f_i²` is affine for affine first eigenfunctions on a
/// toric Kähler–Einstein manifold.
pub fn toric_extremality_test(fs: &[AffineFunction]) -> Result<ToricVerdict> {
    let e = expand_sum_of_squares(fs)?;
    if e.quadratic_is_zero() {
        // Q = 0 forces every u_i = 0 (its trace is Σ|u_i|²), so the linear
        // part vanishes too.
        debug_assert!(fs.iter().all(AffineFunction::is_trivial));
        Ok(ToricVerdict::AffineSum {
            u: e.linear,
            lam: e.constant,
            only_trivial: true,
        })
    } else {
        Ok(ToricVerdict::NotAffine { q: e.q })
    }
}

/// Parse `"p/q"` or `"p"`.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let t = s.trim();
    let r = BigRational::from_str(t).map_err(|_| Error::InvalidInput(format!("not a rational number: {s:?}")))?;
    Ok(r)
}

mod rational {
    use num_rational::BigRational;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&r.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_rational(&s).map_err(D::Error::custom)
    }
}

mod rational_vec {
    use num_rational::BigRational;
    use serde::{de::Error as _, ser::SerializeSeq, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[BigRational], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for r in v {
            seq.serialize_element(&r.to_string())?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigRational>, D::Error> {
        let v = Vec::<String>::deserialize(d)?;
        v.iter()
            .map(|s| super::parse_rational(s).map_err(D::Error::custom))
            .collect()
    }
}

/// Rational matrix rendered as strings, row-major.
pub fn matrix_strings(q: &[Vec<BigRational>]) -> Vec<Vec<String>> {
    q.iter().map(|r| r.iter().map(ToString::to_string).collect()).collect()
}

/// `true` when `Q` is positive semidefinite, checked exactly via symmetric
/// Gaussian elimination.
pub fn is_psd(q: &[Vec<BigRational>]) -> bool {
    let n = q.len();
    let mut a: Vec<Vec<BigRational>> = q.to_vec();
    let mut active: Vec<usize> = (0..n).collect();
    while let Some(&p) = active.first() {
        let piv = a[p][p].clone();
        if piv.is_negative() {
            return false;
        }
        if piv.is_zero() {
            if active.iter().any(|&j| !a[p][j].is_zero()) {
                return false;
            }
            active.remove(0);
            continue;
        }
        active.remove(0);
        for &i in &active {
            let f = &a[i][p] / &piv;
            for &j in &active {
                let d = &f * &a[p][j];
                a[i][j] -= d;
            }
        }
    }
    true
}

fn check_unit_sphere(model: &SurfaceModel, cluster: &EigenspaceCluster, tol: f64) -> Result<()> {
    if !model.kind().is_sphere() || cluster.k != 1 || (cluster.lambda - 2.0).abs() > tol {
        return Err(Error::NotEinsteinSphere {
            lambda1: cluster.lambda,
        });
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct KeCriterionReport {
    pub lambda1: f64,
    /// Mean of `Σ f_i²` against the metric's volume.
    pub mean: f64,
    /// `‖F‖` for `F` the zero-mean part.
    pub zero_mean_norm: f64,
    /// `‖F - Π_{E_1} F‖`.
    pub distance: f64,
}

/// Distance of the zero-mean part of `Σ f_i²` to the `λ_1`-eigenspace, on the
/// normalized round sphere. `functions` are model-basis coefficients of
/// members of the cluster.
pub fn ke_criterion_numeric(
    model: &SurfaceModel,
    cluster: &EigenspaceCluster,
    functions: &[DVector<f64>],
) -> Result<KeCriterionReport> {
    check_unit_sphere(model, cluster, KE_LAMBDA_TOL)?;
    if functions.is_empty() {
        return Err(Error::EmptyCertificate);
    }
    let scale = functions.iter().map(|f| f.amax()).fold(0.0, f64::max).max(1.0);
    let mut sum = DVector::zeros(model.node_count());
    for f in functions {
        if f.len() != model.dim() {
            return Err(Error::LengthMismatch {
                expected: model.dim(),
                got: f.len(),
            });
        }
        let r = span_residual(cluster, f);
        if r > 1e-8 * scale {
            return Err(Error::NotInClusterSpan { residual: r });
        }
        let v = model.eval(f);
        sum += v.component_mul(&v);
    }
    let factor = Some(&cluster.factor);
    let ones = DVector::from_element(model.node_count(), 1.0);
    let area = model.integrate(&ones, factor)?;
    let mean = model.integrate(&sum, factor)? / area;
    let f = sum.add_scalar(-mean);
    let mut rest = f.clone();
    for a in 0..cluster.dim() {
        let e = model.eval(&cluster.member(a));
        let c = model.inner(&f, &e, factor);
        rest.axpy(-c, &e, 1.0);
    }
    Ok(KeCriterionReport {
        lambda1: cluster.lambda,
        mean,
        zero_mean_norm: model.inner(&f, &f, factor).max(0.0).sqrt(),
        distance: model.inner(&rest, &rest, factor).max(0.0).sqrt(),
    })
}

pub const SQUARE_IDENTITY: &str = "laplacian of f^2 = 4 f^2 - 2 |df|^2";
pub const HESSIAN_IDENTITY: &str = "laplacian of (f^2 - |df|^2) = 4 f^2 - 4 |df|^2 + |dd^c f|^2";

#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub lambda1: f64,
    /// Max node residual of the square identity, per cluster member.
    pub square_residuals: Vec<f64>,
    /// Max node residual of the Hessian identity, per cluster member.
    pub hessian_residuals: Vec<f64>,
    pub tolerance: f64,
}

/// Check, node by node, the two pointwise identities satisfied by first
/// eigenfunctions on the unit round sphere.
///
/// `|dd^c f|²` is taken in the 2-form norm, for which `|dd^c f|² = (Δf)²`
/// when `f ∈ E_1` on the unit sphere.
pub fn verify_einstein_identities(model: &SurfaceModel, cluster: &EigenspaceCluster) -> Result<IdentityReport> {
    check_unit_sphere(model, cluster, KE_LAMBDA_STRICT_TOL)?;
    if !cluster.potential.is_zero() {
        return Err(Error::InvalidInput(
            "identities are checked at the round metric only".into(),
        ));
    }
    let mut square_residuals = Vec::new();
    let mut hessian_residuals = Vec::new();
    for a in 0..cluster.dim() {
        let f = cluster.member(a);
        let (sq, hess) = identity_residuals(model, &f)?;
        for (identity, residual) in [(SQUARE_IDENTITY, sq), (HESSIAN_IDENTITY, hess)] {
            if !(residual <= IDENTITY_TOL) {
                return Err(Error::IdentityViolated {
                    identity,
                    residual,
                    tol: IDENTITY_TOL,
                });
            }
        }
        square_residuals.push(sq);
        hessian_residuals.push(hess);
    }
    Ok(IdentityReport {
        lambda1: cluster.lambda,
        square_residuals,
        hessian_residuals,
        tolerance: IDENTITY_TOL,
    })
}

/// Max node residuals of the two identities for one function.
pub fn identity_residuals(model: &SurfaceModel, f: &DVector<f64>) -> Result<(f64, f64)> {
    let vals = model.eval(f);
    let f2 = vals.component_mul(&vals);
    let df2 = model.grad_sq(f);
    let lap_f = model.laplacian(f);

    let lhs10 = model.laplacian_of_sum_of_squares(std::slice::from_ref(f))?;
    let rhs10 = &f2 * 4.0 - &df2 * 2.0;

    let lhs11 = model.laplacian_of_quadratic(std::slice::from_ref(f), |fine, fs| {
        let v = fine.eval(&fs[0]);
        v.component_mul(&v) - fine.grad_sq(&fs[0])
    })?;
    let rhs11 = &f2 * 4.0 - &df2 * 4.0 + lap_f.component_mul(&lap_f);

    Ok(((lhs10 - rhs10).amax(), (lhs11 - rhs11).amax()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{cluster, solve_spectrum, DEFAULT_CLUSTER_TOL};
    use crate::surface::{KahlerPotential, SurfaceKind};

    fn r(p: i64, q: i64) -> BigRational {
        BigRational::new(BigInt::from(p), BigInt::from(q))
    }

    #[test]
    fn single_nontrivial_function_is_not_affine() {
        let v = toric_extremality_test(&[AffineFunction::from_ints(&[1, 0], 0)]).unwrap();
        assert_eq!(
            v,
            ToricVerdict::NotAffine {
                q: vec![vec![r(1, 1), r(0, 1)], vec![r(0, 1), r(0, 1)]]
            }
        );
    }

    #[test]
    fn constants_give_affine_sum_with_trivial_flag() {
        let fs = [AffineFunction::from_ints(&[0, 0], 3), AffineFunction::from_ints(&[0, 0], -1)];
        match toric_extremality_test(&fs).unwrap() {
            ToricVerdict::AffineSum { u, lam, only_trivial } => {
                assert!(u.iter().all(Zero::is_zero));
                assert_eq!(lam, r(10, 1));
                assert!(only_trivial);
            }
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn opposite_functions_do_not_cancel() {
        let fs = [AffineFunction::from_ints(&[1, 0], 0), AffineFunction::from_ints(&[-1, 0], 0)];
        let e = expand_sum_of_squares(&fs).unwrap();
        assert_eq!(e.q, vec![vec![r(2, 1), r(0, 1)], vec![r(0, 1), r(0, 1)]]);
        assert!(e.linear.iter().all(Zero::is_zero));
        assert!(is_psd(&e.q));
        assert_eq!(toric_extremality_test(&fs).unwrap().name(), "NotAffine");
    }

    #[test]
    fn expansion_is_exact_with_fractions() {
        let f = AffineFunction::new(vec![r(1, 3), r(-2, 5)], r(7, 2));
        let e = expand_sum_of_squares(std::slice::from_ref(&f)).unwrap();
        assert_eq!(e.q[0][1], r(-2, 15));
        assert_eq!(e.linear, vec![r(7, 3), r(-14, 5)]);
        assert_eq!(e.constant, r(49, 4));
    }

    #[test]
    fn mismatched_dimensions_and_empty_input_are_rejected() {
        assert!(toric_extremality_test(&[]).is_err());
        let fs = [AffineFunction::from_ints(&[1], 0), AffineFunction::from_ints(&[1, 2], 0)];
        assert!(matches!(toric_extremality_test(&fs), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn json_uses_rational_strings() {
        let f: AffineFunction = serde_json::from_str(r#"{"u":["1/2","-3"],"lam":"4/6"}"#).unwrap();
        assert_eq!(f.u, vec![r(1, 2), r(-3, 1)]);
        assert_eq!(f.lam, r(2, 3));
        assert_eq!(serde_json::to_string(&f).unwrap(), r#"{"u":["1/2","-3"],"lam":"2/3"}"#);
        assert!(serde_json::from_str::<AffineFunction>(r#"{"u":["x"],"lam":"0"}"#).is_err());
    }

    #[test]
    fn psd_check() {
        assert!(is_psd(&[vec![r(1, 1), r(1, 1)], vec![r(1, 1), r(1, 1)]]));
        assert!(!is_psd(&[vec![r(0, 1), r(1, 1)], vec![r(1, 1), r(0, 1)]]));
        assert!(!is_psd(&[vec![r(-1, 1)]]));
    }

    fn sphere_cluster(l_max: usize) -> (SurfaceModel, EigenspaceCluster) {
        let m = SurfaceModel::new(SurfaceKind::unit_sphere(), l_max).unwrap();
        let spec = solve_spectrum(&m, &KahlerPotential::zero(&m), 12).unwrap();
        let c = cluster(&spec, 1, DEFAULT_CLUSTER_TOL).unwrap();
        (m, c)
    }

    /// Coordinate functions `x, y, z` as model coefficients.
    fn coordinates(m: &SurfaceModel) -> [DVector<f64>; 3] {
        let s = (4.0 * std::f64::consts::PI / 3.0).sqrt();
        // degree-1 block: order -1 (sin, y), 0 (z), 1 (cos, x)
        let e = |i: usize| {
            let mut v = DVector::zeros(m.dim());
            v[i] = s;
            v
        };
        [e(3), e(1), e(2)]
    }

    #[test]
    fn coordinate_functions_have_the_expected_values() {
        let (m, _) = sphere_cluster(4);
        let [x, y, z] = coordinates(&m);
        let (vx, vy, vz) = (m.eval(&x), m.eval(&y), m.eval(&z));
        for (j, c) in m.coords().iter().enumerate() {
            let (t, p) = (c[0], c[1]);
            assert!((vx[j] - t.sin() * p.cos()).abs() < 1e-12);
            assert!((vy[j] - t.sin() * p.sin()).abs() < 1e-12);
            assert!((vz[j] - t.cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn full_cluster_satisfies_the_criterion() {
        let (m, c) = sphere_cluster(6);
        let [x, y, z] = coordinates(&m);
        let rep = ke_criterion_numeric(&m, &c, &[x, y, z]).unwrap();
        assert!(rep.distance < 1e-12);
        assert!(rep.zero_mean_norm < 1e-12);
        assert!((rep.mean - 1.0).abs() < 1e-12);
        let members: Vec<_> = (0..3).map(|a| c.member(a)).collect();
        assert!(ke_criterion_numeric(&m, &c, &members).unwrap().distance < 1e-12);
    }

    #[test]
    fn partial_sets_fail_the_criterion() {
        let (m, c) = sphere_cluster(6);
        let [x, y, z] = coordinates(&m);
        // ‖z² - 1/3‖ = sqrt(16π/45)
        let expected = (16.0 * std::f64::consts::PI / 45.0).sqrt();
        let dz = ke_criterion_numeric(&m, &c, &[z]).unwrap().distance;
        assert!((dz - expected).abs() < 1e-10, "{dz}");
        let dxy = ke_criterion_numeric(&m, &c, &[x, y]).unwrap().distance;
        assert!((dxy - expected).abs() < 1e-10, "{dxy}");
    }

    #[test]
    fn criterion_rejects_other_models() {
        let m = SurfaceModel::new(SurfaceKind::RoundSphere { radius: 2.0 }, 4).unwrap();
        let spec = solve_spectrum(&m, &KahlerPotential::zero(&m), 4).unwrap();
        let c = cluster(&spec, 1, DEFAULT_CLUSTER_TOL).unwrap();
        let f = c.member(0);
        assert!(matches!(ke_criterion_numeric(&m, &c, &[f]), Err(Error::NotEinsteinSphere { .. })));
        assert!(matches!(verify_einstein_identities(&m, &c), Err(Error::NotEinsteinSphere { .. })));

        let (m, c) = sphere_cluster(4);
        let mut off = DVector::zeros(m.dim());
        off[5] = 1.0;
        assert!(matches!(ke_criterion_numeric(&m, &c, &[off]), Err(Error::NotInClusterSpan { .. })));
    }

    #[test]
    fn identities_hold_on_the_round_sphere() {
        let (m, c) = sphere_cluster(6);
        let rep = verify_einstein_identities(&m, &c).unwrap();
        assert_eq!(rep.square_residuals.len(), 3);
        assert!(rep.square_residuals.iter().chain(&rep.hessian_residuals).all(|&r| r < 1e-10));
        assert!((rep.lambda1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn square_identity_for_z_matches_closed_form() {
        let (m, _) = sphere_cluster(4);
        let z = coordinates(&m)[2].clone();
        let lhs = m.laplacian_of_sum_of_squares(&[z.clone()]).unwrap();
        let vz = m.eval(&z);
        let closed = vz.map(|t| 6.0 * t * t - 2.0);
        assert!((lhs - closed).amax() < 1e-12);
    }

    #[test]
    fn identities_fail_off_the_eigenspace() {
        let (m, _) = sphere_cluster(4);
        let mut f = DVector::zeros(m.dim());
        f[6] = 1.0;
        let (sq, hess) = identity_residuals(&m, &f).unwrap();
        assert!(sq > 0.1 && hess > 0.1);
    }
}
