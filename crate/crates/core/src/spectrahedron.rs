//! Convex quadratic minimization over the spectrahedron
//! `{B ∈ Sym(d) : B ⪰ 0, tr B = 1}`.
//!
//! The objective is `R(B) = ‖Σ_ab B_ab A_ab‖²` for a symmetric family of
//! vectors `A_ab`, stored through its Gram matrix `H = Aᵀ A` acting on
//! `vec(B)`. The solver is Frank–Wolfe: the linear minimization oracle over
//! the spectrahedron is `v vᵀ` for the bottom eigenvector `v` of the gradient
//! `G = ∇R(B)`, followed by an exact line search. After every Frank–Wolfe
//! step an in-face step re-minimizes `R` over the face spanned by the current
//! range of `B` (an equality-constrained quadratic solved exactly), which
//! turns the `O(1/t)` rate into finite termination on the small problems
//! used here.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once `√R(B)` is at or below this value.
    pub target_residual: f64,
    /// Stop once the Frank–Wolfe duality gap is at or below this value.
    pub gap_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            target_residual: 0.0,
            gap_tol: 1e-15,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectrahedronSolution {
    pub b: DMatrix<f64>,
    /// `R(B)` at the returned point.
    pub objective: f64,
    /// Frank–Wolfe gap `⟨G, B⟩ - λ_min(G)`, an upper bound on `R(B) - R*`.
    pub gap: f64,
    /// Gradient `G = ∇R(B)` at the returned point.
    pub gradient: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `R(B)` after each iteration, starting with the initial point.
    pub history: Vec<f64>,
}

impl SpectrahedronSolution {
    pub fn residual(&self) -> f64 {
        self.objective.max(0.0).sqrt()
    }
}

/// `min R(B) = vec(B)ᵀ H vec(B)` over the spectrahedron.
#[derive(Clone, Debug)]
pub struct QuadraticOverSpectrahedron {
    d: usize,
    h: DMatrix<f64>,
}

impl QuadraticOverSpectrahedron {
    /// `atoms` is the `n × d²` matrix whose column `a + d*b` holds `A_ab`
    /// (already scaled so that the Euclidean norm is the intended one).
    pub fn from_atom_matrix(d: usize, atoms: &DMatrix<f64>) -> Self {
        assert_eq!(atoms.ncols(), d * d, "atom matrix must have d² columns");
        let h = atoms.transpose() * atoms;
        Self::from_gram(d, h)
    }

    pub fn from_gram(d: usize, h: DMatrix<f64>) -> Self {
        assert_eq!(h.nrows(), d * d);
        let h = (&h + h.transpose()) * 0.5;
        Self { d, h }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn objective(&self, b: &DMatrix<f64>) -> f64 {
        let v = vec_of(b);
        v.dot(&(&self.h * &v))
    }

    pub fn gradient(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let g = &self.h * vec_of(b) * 2.0;
        let g = DMatrix::from_column_slice(self.d, self.d, g.as_slice());
        (&g + g.transpose()) * 0.5
    }

    fn bilinear(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        vec_of(x).dot(&(&self.h * vec_of(y)))
    }

    /// Exact minimizer of `R(B + γ D)` for `γ ∈ [0, γ_max]`.
    fn line_search(&self, b: &DMatrix<f64>, dir: &DMatrix<f64>, gamma_max: f64) -> f64 {
        let a = self.bilinear(dir, dir);
        let slope = self.bilinear(dir, b);
        if a <= 0.0 {
            return if slope < 0.0 { gamma_max } else { 0.0 };
        }
        (-slope / a).clamp(0.0, gamma_max)
    }

    pub fn minimize(&self, opts: &SolverOptions) -> SpectrahedronSolution {
        let d = self.d;
        let mut b = DMatrix::identity(d, d) / d as f64;
        let mut obj = self.objective(&b);
        let mut history = vec![obj];
        let mut converged = false;
        let mut iterations = 0;
        let target = opts.target_residual * opts.target_residual;

        loop {
            let grad = self.gradient(&b);
            let (mu_min, v) = bottom_eigenpair(&grad);
            let gap = grad.dot(&b) - mu_min;
            if obj <= target || gap <= opts.gap_tol {
                converged = true;
            }
            if converged || iterations >= opts.max_iters {
                return SpectrahedronSolution {
                    b,
                    objective: obj,
                    gap,
                    gradient: grad,
                    iterations,
                    converged,
                    history,
                };
            }
            iterations += 1;

            let atom = &v * v.transpose();
            let dir = &atom - &b;
            let gamma = self.line_search(&b, &dir, 1.0);
            if gamma > 0.0 {
                let cand = &b + &dir * gamma;
                let cand_obj = self.objective(&cand);
                if cand_obj <= obj {
                    b = cand;
                    obj = cand_obj;
                }
            }
            if let Some((cand, cand_obj)) = self.in_face_step(&b) {
                if cand_obj < obj {
                    b = cand;
                    obj = cand_obj;
                }
            }
            history.push(obj);
        }
    }

    /// Minimize `R` over `{U W Uᵀ : W ⪰ 0, tr W = 1}` where `U` spans the
    /// range of `b`; moves as far toward the unconstrained face optimum as
    /// positivity allows.
    fn in_face_step(&self, b: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
        let d = self.d;
        let eig = SymmetricEigen::new(b.clone());
        let top = eig.eigenvalues.max();
        let keep: Vec<usize> = (0..d).filter(|&i| eig.eigenvalues[i] > 1e-10 * top).collect();
        let r = keep.len();
        if r == 0 {
            return None;
        }
        let u = DMatrix::from_fn(d, r, |i, j| eig.eigenvectors[(i, keep[j])]);

        // Orthonormal parametrization of Sym(r).
        let mut sym_basis = Vec::with_capacity(r * (r + 1) / 2);
        for p in 0..r {
            for q in p..r {
                let mut e = DMatrix::zeros(r, r);
                if p == q {
                    e[(p, p)] = 1.0;
                } else {
                    let s = std::f64::consts::FRAC_1_SQRT_2;
                    e[(p, q)] = s;
                    e[(q, p)] = s;
                }
                sym_basis.push(e);
            }
        }
        let m = sym_basis.len();
        let lifted: Vec<DVector<f64>> = sym_basis.iter().map(|e| vec_of(&(&u * e * u.transpose()))).collect();
        let mut kkt = DMatrix::zeros(m + 1, m + 1);
        for i in 0..m {
            let hi = &self.h * &lifted[i];
            for j in i..m {
                let v = 2.0 * lifted[j].dot(&hi);
                kkt[(i, j)] = v;
                kkt[(j, i)] = v;
            }
            let t = sym_basis[i].trace();
            kkt[(i, m)] = t;
            kkt[(m, i)] = t;
        }
        let mut rhs = DVector::zeros(m + 1);
        rhs[m] = 1.0;
        let svd = kkt.clone().svd(true, true);
        let eps = 1e-13 * svd.singular_values.max();
        let sol = svd.solve(&rhs, eps).ok()?;
        let mut w = DMatrix::zeros(r, r);
        for (i, e) in sym_basis.iter().enumerate() {
            w += e * sol[i];
        }
        let w_now = u.transpose() * b * &u;
        let w_now = (&w_now + w_now.transpose()) * 0.5;
        let dir_w = &w - &w_now;
        let alpha_max = max_psd_step(&w_now, &dir_w);
        if alpha_max <= 0.0 {
            return None;
        }
        let dir = &u * &dir_w * u.transpose();
        let alpha = self.line_search(b, &dir, alpha_max);
        if alpha <= 0.0 {
            return None;
        }
        let mut cand = b + dir * alpha;
        cand = (&cand + cand.transpose()) * 0.5;
        let tr = cand.trace();
        cand /= tr;
        let obj = self.objective(&cand);
        Some((cand, obj))
    }
}

/// Largest `α ∈ [0, 1]` with `w + α dir ⪰ 0`, by bisection.
fn max_psd_step(w: &DMatrix<f64>, dir: &DMatrix<f64>) -> f64 {
    let min_eig = |a: f64| SymmetricEigen::new(w + dir * a).eigenvalues.min();
    if min_eig(1.0) >= -1e-15 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if min_eig(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Smallest eigenvalue and a unit eigenvector with a deterministic sign
/// (first nonnegligible component positive).
pub fn bottom_eigenpair(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let i = eig.eigenvalues.imin();
    let mut v = eig.eigenvectors.column(i).into_owned();
    let scale = v.amax();
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * scale).copied() {
        if first < 0.0 {
            v = -v;
        }
    }
    (eig.eigenvalues[i], v)
}

/// Column-major vectorization.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Factor a PSD matrix as `Σ c_i c_iᵀ`, dropping components with weight
/// below `drop_below`; columns are returned in descending weight order.
pub fn factor_psd(b: &DMatrix<f64>, drop_below: f64) -> Vec<DVector<f64>> {
    let eig = SymmetricEigen::new(b.clone());
    let mut order: Vec<usize> = (0..b.nrows()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] >= drop_below)
        .map(|i| {
            let mut v = eig.eigenvectors.column(i).into_owned();
            let p = v.iamax();
            if v[p] < 0.0 {
                v = -v;
            }
            v * eig.eigenvalues[i].sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem_from_vectors(d: usize, atoms: &[Vec<Vec<f64>>]) -> QuadraticOverSpectrahedron {
        let n = atoms[0][0].len();
        let mut m = DMatrix::zeros(n, d * d);
        for a in 0..d {
            for b in 0..d {
                for j in 0..n {
                    m[(j, a + d * b)] = atoms[a][b][j];
                }
            }
        }
        QuadraticOverSpectrahedron::from_atom_matrix(d, &m)
    }

    #[test]
    fn finds_zero_in_interior() {
        // A_11 = (1, 0), A_22 = (-1, 0), A_12 = (0, 1): zero at B = I/2.
        let atoms = vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![-1.0, 0.0]],
        ];
        let p = problem_from_vectors(2, &atoms);
        let sol = p.minimize(&SolverOptions::default());
        assert!(sol.residual() < 1e-12);
        assert!((sol.b[(0, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn separated_case_reports_positive_residual() {
        // All atoms positive in the first coordinate: 0 is not in the hull.
        let atoms = vec![
            vec![vec![1.0, 0.3], vec![0.1, 0.0]],
            vec![vec![0.1, 0.0], vec![2.0, -0.5]],
        ];
        let p = problem_from_vectors(2, &atoms);
        let sol = p.minimize(&SolverOptions::default());
        assert!(sol.residual() > 0.1);
        assert!(sol.gap < 1e-10);
        for w in sol.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn factorization_reproduces_matrix() {
        let b = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.1, 0.3, 0.05, 0.0, 0.05, 0.2]);
        let cs = factor_psd(&b, 1e-12);
        let mut sum = DMatrix::zeros(3, 3);
        for c in &cs {
            sum += c * c.transpose();
        }
        assert!((sum - b).amax() < 1e-14);
    }
}
