//! Dense solves for the regularized normal equations and a projected-gradient
//! solver for the nonnegative variant.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative residual bound for accepting a direct solve.
pub const RESIDUAL_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    Direct,
    ProjectedGradient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub solution: DVector<f64>,
    /// `|A x - b|_2` for the system that was solved.
    pub residual_norm: f64,
    pub method: SolveMethod,
}

/// The matrix multiplying the ridge constant.
#[derive(Clone, Copy, Debug)]
pub enum RidgeMatrix<'a> {
    Identity,
    Given(&'a DMatrix<f64>),
}

pub fn is_symmetric(a: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let n = a.nrows();
    (0..n).all(|i| (i + 1..n).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= rel_tol * scale))
}

fn residual(m: &DMatrix<f64>, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let r = (m * x - b).norm();
    if r.is_finite() && x.iter().all(|v| v.is_finite()) {
        r
    } else {
        f64::INFINITY
    }
}

/// Solves `(A + ridge R) x = b` with a direct factorization.
///
/// Cholesky is tried first for symmetric systems, then LU with partial
/// pivoting plus two steps of iterative refinement, and finally an SVD
/// least-squares solve for consistent rank-deficient systems. A solution is
/// returned only if `|(A + ridge R) x - b| <= 1e-8 (1 + |b|)`; otherwise the
/// system is reported as singular.
pub fn solve_regularized(a: &DMatrix<f64>, ridge: f64, ridge_matrix: RidgeMatrix<'_>, b: &DVector<f64>) -> Result<SolveReport> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(format!("matrix is {}x{}, expected square", a.nrows(), a.ncols())));
    }
    if b.len() != a.nrows() {
        return Err(Error::LengthMismatch { expected: a.nrows(), found: b.len() });
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge must be finite and nonnegative, got {ridge}")));
    }
    let mut m = a.clone();
    match ridge_matrix {
        RidgeMatrix::Identity => {
            for i in 0..m.nrows() {
                m[(i, i)] += ridge;
            }
        }
        RidgeMatrix::Given(r) => {
            if r.shape() != a.shape() {
                return Err(Error::DimensionMismatch { expected: a.nrows(), found: r.nrows() });
            }
            m += r * ridge;
        }
    }
    let tol = RESIDUAL_TOL * (1.0 + b.norm());
    let accept = |x: DVector<f64>| -> std::result::Result<SolveReport, f64> {
        let res = residual(&m, &x, b);
        if res <= tol {
            Ok(SolveReport { solution: x, residual_norm: res, method: SolveMethod::Direct })
        } else {
            Err(res)
        }
    };
    let mut best = f64::INFINITY;

    if is_symmetric(&m, 1e-14) {
        if let Some(chol) = m.clone().cholesky() {
            match accept(chol.solve(b)) {
                Ok(rep) => return Ok(rep),
                Err(res) => best = best.min(res),
            }
        }
    }

    let lu = m.clone().lu();
    if let Some(mut x) = lu.solve(b) {
        for _ in 0..3 {
            let res = residual(&m, &x, b);
            if res <= tol || !res.is_finite() {
                break;
            }
            match lu.solve(&(b - &m * &x)) {
                Some(dx) => x += dx,
                None => break,
            }
        }
        match accept(x) {
            Ok(rep) => return Ok(rep),
            Err(res) => best = best.min(res),
        }
    }

    let svd = m.clone().svd(true, true);
    let eps = svd.singular_values.max() * f64::EPSILON * m.nrows() as f64;
    if let Ok(x) = svd.solve(b, eps) {
        match accept(x) {
            Ok(rep) => return Ok(rep),
            Err(res) => best = best.min(res),
        }
    }
    Err(Error::Singular { gamma: ridge, residual: best })
}

/// Solves `(A + shift I) x = b` for many shifts of one matrix.
///
/// `A` is reduced once to upper Hessenberg form `A = Q H Q'`; each shift then
/// costs `O(n^2)`: Gaussian elimination with partial pivoting on `H + shift I`
/// (only adjacent rows ever swap), followed by up to two refinement steps.
/// A shift whose refined residual still misses the acceptance bound is handed
/// to [`solve_regularized`], so the acceptance rule is the same.
#[derive(Clone, Debug)]
pub struct ShiftedSolver {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    h: DMatrix<f64>,
}

impl ShiftedSolver {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidArgument(format!("matrix is {}x{}, expected square", a.nrows(), a.ncols())));
        }
        let (q, h) = if a.nrows() == 0 { (a.clone(), a.clone()) } else { a.clone().hessenberg().unpack() };
        Ok(Self { a, q, h })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    fn hessenberg_solve(&self, shift: f64, c: &DVector<f64>) -> Option<DVector<f64>> {
        let n = c.len();
        let mut m = self.h.clone();
        let mut y = c.clone();
        for i in 0..n {
            m[(i, i)] += shift;
        }
        for k in 0..n.saturating_sub(1) {
            if m[(k + 1, k)].abs() > m[(k, k)].abs() {
                m.swap_rows(k, k + 1);
                y.swap_rows(k, k + 1);
            }
            let pivot = m[(k, k)];
            if pivot == 0.0 {
                return None;
            }
            let f = m[(k + 1, k)] / pivot;
            if f != 0.0 {
                for j in k..n {
                    m[(k + 1, j)] -= f * m[(k, j)];
                }
                y[k + 1] -= f * y[k];
            }
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in i + 1..n {
                acc -= m[(i, j)] * y[j];
            }
            if m[(i, i)] == 0.0 {
                return None;
            }
            y[i] = acc / m[(i, i)];
        }
        Some(y)
    }

    fn shifted_residual(&self, shift: f64, x: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        b - &self.a * x - x * shift
    }

    pub fn solve(&self, shift: f64, b: &DVector<f64>) -> Result<SolveReport> {
        if b.len() != self.a.nrows() {
            return Err(Error::LengthMismatch { expected: self.a.nrows(), found: b.len() });
        }
        if !(shift >= 0.0) || !shift.is_finite() {
            return Err(Error::InvalidArgument(format!("ridge must be finite and nonnegative, got {shift}")));
        }
        let tol = RESIDUAL_TOL * (1.0 + b.norm());
        let step = |rhs: &DVector<f64>| self.hessenberg_solve(shift, &self.q.tr_mul(rhs)).map(|y| &self.q * y);
        if let Some(mut x) = step(b) {
            for attempt in 0..3 {
                let r = self.shifted_residual(shift, &x, b);
                let res = r.norm();
                if res <= tol && x.iter().all(|v| v.is_finite()) {
                    return Ok(SolveReport { solution: x, residual_norm: res, method: SolveMethod::Direct });
                }
                if attempt == 2 || !res.is_finite() {
                    break;
                }
                match step(&r) {
                    Some(dx) => x += dx,
                    None => break,
                }
            }
        }
        solve_regularized(&self.a, shift, RidgeMatrix::Identity, b)
    }
}

/// Solves `(A A + shift A) x = b` for many shifts of one symmetric
/// positive semidefinite `A`.
///
/// With `A = Q diag(l) Q'` computed once, each shift is the diagonal solve
/// `x = Q diag(1 / (l^2 + shift l)) Q' b`, eigenvalues below `n eps max(l)`
/// being treated as zero (a minimum-norm solution for the consistent singular
/// case). Shifts whose residual misses the acceptance bound are handed to
/// [`solve_regularized`].
#[derive(Clone, Debug)]
pub struct ProductShiftSolver {
    a: DMatrix<f64>,
    aa: DMatrix<f64>,
    q: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    cutoff: f64,
}

impl ProductShiftSolver {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !is_symmetric(&a, 1e-12) {
            return Err(Error::NotSymmetric);
        }
        let eig = a.clone().symmetric_eigen();
        let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cutoff = max * f64::EPSILON * a.nrows() as f64;
        let aa = &a * &a;
        Ok(Self { a, aa, q: eig.eigenvectors, eigenvalues: eig.eigenvalues, cutoff })
    }

    pub fn solve(&self, shift: f64, b: &DVector<f64>) -> Result<SolveReport> {
        if b.len() != self.a.nrows() {
            return Err(Error::LengthMismatch { expected: self.a.nrows(), found: b.len() });
        }
        if !(shift >= 0.0) || !shift.is_finite() {
            return Err(Error::InvalidArgument(format!("ridge must be finite and nonnegative, got {shift}")));
        }
        let mut c = self.q.tr_mul(b);
        for (ci, &l) in c.iter_mut().zip(self.eigenvalues.iter()) {
            *ci = if l > self.cutoff { *ci / (l * (l + shift)) } else { 0.0 };
        }
        let x = &self.q * c;
        let res = (&self.aa * &x + (&self.a * &x) * shift - b).norm();
        if res.is_finite() && res <= RESIDUAL_TOL * (1.0 + b.norm()) && x.iter().all(|v| v.is_finite()) {
            return Ok(SolveReport { solution: x, residual_norm: res, method: SolveMethod::Direct });
        }
        solve_regularized(&self.aa, shift, RidgeMatrix::Given(&self.a), b)
    }
}

/// Upper bound on the largest eigenvalue of a symmetric matrix (max absolute row sum).
fn lipschitz_bound(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `0.5 x'Ax - b'x`.
pub fn qp_objective(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(a * x)) - b.dot(x)
}

/// Minimizes `0.5 x'Ax - b'x` over `x >= 0` by projected gradient with step
/// `1/L`, `L` the max absolute row sum of `A`.
///
/// Stops when the projected-gradient norm drops to `tol` or after `max_iter`
/// iterations. The objective is nonincreasing along the iterates.
pub fn solve_nonneg(a: &DMatrix<f64>, b: &DVector<f64>, max_iter: usize, tol: f64) -> Result<SolveReport> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(format!("matrix is {}x{}, expected square", a.nrows(), a.ncols())));
    }
    if b.len() != a.nrows() {
        return Err(Error::LengthMismatch { expected: a.nrows(), found: b.len() });
    }
    if !is_symmetric(a, 1e-12) {
        return Err(Error::NotSymmetric);
    }
    let n = b.len();
    let lip = lipschitz_bound(a);
    let mut x = DVector::zeros(n);
    if lip > 0.0 {
        let step = 1.0 / lip;
        for _ in 0..max_iter {
            let grad = a * &x - b;
            let pg_norm = grad
                .iter()
                .zip(x.iter())
                .map(|(&g, &xi)| if xi > 0.0 { g } else { g.min(0.0) })
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if pg_norm <= tol {
                break;
            }
            x.zip_apply(&grad, |xi, g| *xi = (*xi - step * g).max(0.0));
        }
    } else {
        // A = 0: the objective is linear, bounded below only where b <= 0.
        x = b.map(|v| if v > 0.0 { f64::INFINITY } else { 0.0 });
        if x.iter().any(|v| v.is_infinite()) {
            return Err(Error::InvalidArgument("objective is unbounded below on x >= 0".into()));
        }
    }
    let residual_norm = (a * &x - b).norm();
    Ok(SolveReport { solution: x, residual_norm, method: SolveMethod::ProjectedGradient })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_solve() {
        let rep = solve_regularized(&DMatrix::identity(2, 2), 0.0, RidgeMatrix::Identity, &DVector::from_vec(vec![1.0, 2.0]))
            .unwrap();
        assert_eq!(rep.solution, DVector::from_vec(vec![1.0, 2.0]));
        assert_eq!(rep.method, SolveMethod::Direct);
    }

    #[test]
    fn ridge_solve() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let rep = solve_regularized(&a, 1.0, RidgeMatrix::Identity, &DVector::from_vec(vec![3.0, 3.0])).unwrap();
        assert_abs_diff_eq!(rep.solution, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-14);
    }

    #[test]
    fn ridge_rescues_singular() {
        let rep =
            solve_regularized(&DMatrix::zeros(1, 1), 0.5, RidgeMatrix::Identity, &DVector::from_vec(vec![1.0])).unwrap();
        assert_abs_diff_eq!(rep.solution[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn given_ridge_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let b = DVector::from_vec(vec![4.0, 4.0]);
        let rep = solve_regularized(&a, 1.0, RidgeMatrix::Given(&r), &b).unwrap();
        // [[2,2],[0,4]] x = (4,4)
        assert_abs_diff_eq!(rep.solution, DVector::from_vec(vec![1.0, 1.0]), epsilon = 1e-14);
    }

    #[test]
    fn inconsistent_singular_system_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = solve_regularized(&a, 0.0, RidgeMatrix::Identity, &DVector::from_vec(vec![1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn consistent_singular_system_is_solved() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let rep = solve_regularized(&a, 0.0, RidgeMatrix::Identity, &DVector::from_vec(vec![3.0, 0.0])).unwrap();
        assert_abs_diff_eq!(rep.solution[0], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn shifted_solver_matches_direct_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 7, 30] {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let solver = ShiftedSolver::new(a.clone()).unwrap();
            for shift in [0.0, 1e-3, 0.5, 10.0] {
                match solve_regularized(&a, shift, RidgeMatrix::Identity, &b) {
                    Ok(direct) => {
                        let rep = solver.solve(shift, &b).unwrap();
                        assert!(rep.residual_norm <= RESIDUAL_TOL * (1.0 + b.norm()));
                        let scale = 1.0 + direct.solution.norm();
                        assert!((&rep.solution - &direct.solution).norm() <= 1e-6 * scale, "n={n} shift={shift}");
                    }
                    Err(_) => assert!(solver.solve(shift, &b).is_err()),
                }
            }
        }
    }

    #[test]
    fn shifted_solver_falls_back_on_singular_shift() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let solver = ShiftedSolver::new(a).unwrap();
        assert!(matches!(solver.solve(0.0, &DVector::from_vec(vec![1.0, 0.0])), Err(Error::Singular { .. })));
        let rep = solver.solve(0.0, &DVector::from_vec(vec![2.0, 2.0])).unwrap();
        assert_abs_diff_eq!(rep.solution.sum(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn product_shift_solver_matches_direct_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in [1, 3, 12] {
            let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let a = g.transpose() * &g + DMatrix::identity(n, n) * 0.1;
            let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let solver = ProductShiftSolver::new(a.clone()).unwrap();
            for shift in [0.0, 1e-2, 3.0] {
                let direct = solve_regularized(&(&a * &a), shift, RidgeMatrix::Given(&a), &b).unwrap();
                let rep = solver.solve(shift, &b).unwrap();
                assert!((&rep.solution - &direct.solution).norm() <= 1e-8 * (1.0 + direct.solution.norm()));
            }
        }
        assert!(matches!(ProductShiftSolver::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])), Err(Error::NotSymmetric)));
    }

    #[test]
    fn product_shift_solver_handles_consistent_null_space() {
        // A zero row and column, as produced by a sample on the upper box face.
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let rep = ProductShiftSolver::new(a).unwrap().solve(1.0, &DVector::from_vec(vec![6.0, 0.0])).unwrap();
        assert_abs_diff_eq!(rep.solution, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-14);
    }

    #[test]
    fn nonneg_examples() {
        let i2 = DMatrix::identity(2, 2);
        let rep = solve_nonneg(&i2, &DVector::from_vec(vec![1.0, -1.0]), 1000, 1e-12).unwrap();
        assert_eq!(rep.solution, DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(rep.method, SolveMethod::ProjectedGradient);
        let rep = solve_nonneg(&i2, &DVector::from_vec(vec![0.5, 2.0]), 1000, 1e-12).unwrap();
        assert_abs_diff_eq!(rep.solution, DVector::from_vec(vec![0.5, 2.0]), epsilon = 1e-12);
    }

    #[test]
    fn nonneg_rejects_nonsymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(solve_nonneg(&a, &DVector::zeros(2), 10, 1e-9), Err(Error::NotSymmetric)));
    }

    #[test]
    fn nonneg_objective_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let a = g.transpose() * &g;
        let b = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let mut last = f64::INFINITY;
        for iters in [0, 1, 2, 5, 10, 50, 200, 1000] {
            let x = solve_nonneg(&a, &b, iters, 0.0).unwrap().solution;
            assert!(x.iter().all(|v| *v >= 0.0));
            let f = qp_objective(&a, &b, &x);
            assert!(f <= last + 1e-15);
            last = f;
        }
    }

    #[test]
    fn nonneg_agrees_with_direct_when_interior() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let x_true = DVector::from_vec(vec![0.3, 0.8]);
        let b = &a * &x_true;
        let pg = solve_nonneg(&a, &b, 100_000, 1e-12).unwrap();
        let direct = solve_regularized(&a, 0.0, RidgeMatrix::Identity, &b).unwrap();
        assert_abs_diff_eq!(pg.solution, direct.solution, epsilon = 1e-10);
    }
}
