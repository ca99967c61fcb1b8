//! Box-overlap matrices between sample points.
//!
//! For two points `a`, `b` in `[0,u]` the overlap volume
//! `prod_k (u^k - max(a^k, b^k))` is the `L2[0,u]` inner product of the step
//! functions `theta(x - a)` and `theta(x - b)`. Collecting it over
//! denominator/denominator pairs gives the `n x n` matrix `V''`; over
//! denominator/numerator pairs it gives the `n x l` matrix `V'`. With these,
//! the squared `L2` distance between the weighted denominator ECDF and the
//! numerator ECDF is a quadratic form in the weights.

use nalgebra::{DMatrix, DVector};

use crate::domain::ScaledSamples;
use crate::error::{Error, Result};

/// `V''` (denominator x denominator) and `V'` (denominator x numerator).
#[derive(Clone, Debug, PartialEq)]
pub struct VMatrices {
    pub v_dd: DMatrix<f64>,
    pub v_dn: DMatrix<f64>,
}

impl VMatrices {
    pub fn n(&self) -> usize {
        self.v_dd.nrows()
    }

    pub fn l(&self) -> usize {
        self.v_dn.ncols()
    }

    /// `V' 1`, the row sums of the cross matrix.
    pub fn cross_row_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.v_dn.row_iter().map(|r| r.sum()))
    }
}

/// Overlap volume `prod_k (u^k - max(a^k, b^k))`.
pub fn v_entry(a: &[f64], b: &[f64], u: &[f64]) -> Result<f64> {
    if a.len() != u.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: a.len() });
    }
    if b.len() != u.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: b.len() });
    }
    let mut prod = 1.0;
    for k in 0..u.len() {
        let m = a[k].max(b[k]);
        if m > u[k] {
            return Err(Error::Domain(format!("coordinate {k}: {m} exceeds upper limit {}", u[k])));
        }
        prod *= u[k] - m;
    }
    Ok(prod)
}

fn check_rows(points: &DMatrix<f64>, u: &[f64]) -> Result<()> {
    if points.ncols() != u.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: points.ncols() });
    }
    for i in 0..points.nrows() {
        for (k, &uk) in u.iter().enumerate() {
            let v = points[(i, k)];
            if !(v <= uk) {
                return Err(Error::Domain(format!("row {i} coordinate {k}: {v} exceeds upper limit {uk}")));
            }
        }
    }
    Ok(())
}

#[inline]
fn overlap(rows: &DMatrix<f64>, i: usize, cols: &DMatrix<f64>, j: usize, u: &[f64]) -> f64 {
    let mut prod = 1.0;
    for (k, &uk) in u.iter().enumerate() {
        prod *= uk - rows[(i, k)].max(cols[(j, k)]);
        if prod == 0.0 {
            break;
        }
    }
    prod
}

/// Overlap matrix between the rows of `rows` and the rows of `cols`.
pub fn cross_v(rows: &DMatrix<f64>, cols: &DMatrix<f64>, u: &[f64]) -> Result<DMatrix<f64>> {
    check_rows(rows, u)?;
    check_rows(cols, u)?;
    Ok(DMatrix::from_fn(rows.nrows(), cols.nrows(), |i, j| overlap(rows, i, cols, j, u)))
}

/// Symmetric overlap matrix of a point set with itself.
pub fn self_v(points: &DMatrix<f64>, u: &[f64]) -> Result<DMatrix<f64>> {
    check_rows(points, u)?;
    let n = points.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = overlap(points, i, points, j, u);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Builds `V''` and `V'` for the scaled samples.
pub fn build_v_matrices(s: &ScaledSamples) -> Result<VMatrices> {
    let u = s.domain.u();
    Ok(VMatrices { v_dd: self_v(&s.x_prime, &u)?, v_dn: cross_v(&s.x_prime, &s.x, &u)? })
}

/// Exact squared `L2[0,u]` distance between the `r`-weighted denominator ECDF
/// and the numerator ECDF, including the term that does not depend on `r`.
pub fn l2_residual(s: &ScaledSamples, r: &DVector<f64>) -> Result<f64> {
    if r.len() != s.n() {
        return Err(Error::LengthMismatch { expected: s.n(), found: r.len() });
    }
    let u = s.domain.u();
    let vm = build_v_matrices(s)?;
    let v_nn = self_v(&s.x, &u)?;
    let n = s.n() as f64;
    let l = s.l() as f64;
    let aa = r.dot(&(&vm.v_dd * r)) / (n * n);
    let ab = r.dot(&vm.cross_row_sums()) / (n * l);
    let bb = v_nn.sum() / (l * l);
    Ok((aa - 2.0 * ab + bb).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Midpoint-rule integral of theta(x-a) theta(x-b) over [0,1].
    fn quad_1d(a: f64, b: f64, cells: usize) -> f64 {
        let h = 1.0 / cells as f64;
        (0..cells)
            .map(|i| (i as f64 + 0.5) * h)
            .filter(|&x| x >= a && x >= b)
            .count() as f64
            * h
    }

    #[test]
    fn entry_examples() {
        assert_eq!(v_entry(&[0.0], &[0.0], &[1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(v_entry(&[0.2], &[0.5], &[1.0]).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(quad_1d(0.2, 0.5, 100_000), 0.5, epsilon = 1e-4);
        let v = v_entry(&[0.2, 0.4], &[0.5, 0.1], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(v, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn entry_domain_error() {
        assert!(matches!(v_entry(&[1.2], &[0.0], &[1.0]), Err(Error::Domain(_))));
        assert!(v_entry(&[0.1, 0.2], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn matrices_small() {
        let s = ScaledSamples::from_unit(DMatrix::from_row_slice(1, 1, &[0.0]), DMatrix::from_row_slice(1, 1, &[0.0]))
            .unwrap();
        let vm = build_v_matrices(&s).unwrap();
        assert_eq!(vm.v_dd, DMatrix::from_row_slice(1, 1, &[1.0]));
        assert_eq!(vm.v_dn, DMatrix::from_row_slice(1, 1, &[1.0]));

        let s = ScaledSamples::from_unit(
            DMatrix::from_row_slice(2, 1, &[0.0, 0.5]),
            DMatrix::from_row_slice(1, 1, &[0.25]),
        )
        .unwrap();
        let vm = build_v_matrices(&s).unwrap();
        assert_eq!(vm.v_dd, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.5]));
        assert_eq!(vm.v_dn, DMatrix::from_row_slice(2, 1, &[0.75, 0.5]));
    }

    #[test]
    fn boundary_point_has_zero_diagonal() {
        let s = ScaledSamples::from_unit(
            DMatrix::from_row_slice(2, 2, &[0.3, 1.0, 0.2, 0.1]),
            DMatrix::from_row_slice(1, 2, &[0.5, 0.5]),
        )
        .unwrap();
        let vm = build_v_matrices(&s).unwrap();
        assert_eq!(vm.v_dd[(0, 0)], 0.0);
    }

    #[test]
    fn residual_examples() {
        let pts = DMatrix::from_row_slice(3, 1, &[0.1, 0.4, 0.7]);
        let s = ScaledSamples::from_unit(pts.clone(), pts).unwrap();
        let r = DVector::from_element(3, 1.0);
        assert_abs_diff_eq!(l2_residual(&s, &r).unwrap(), 0.0, epsilon = 1e-14);

        let s = ScaledSamples::from_unit(DMatrix::from_row_slice(1, 1, &[0.0]), DMatrix::from_row_slice(1, 1, &[0.0]))
            .unwrap();
        assert_abs_diff_eq!(l2_residual(&s, &DVector::from_element(1, 0.0)).unwrap(), 1.0, epsilon = 1e-15);
        assert!(l2_residual(&s, &DVector::from_element(2, 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn entry_symmetric_and_monotone(
            a in prop::collection::vec(0.0..1.0f64, 3),
            b in prop::collection::vec(0.0..1.0f64, 3),
            k in 0usize..3,
            bump in 0.0..1.0f64,
        ) {
            let u = [1.0; 3];
            let ab = v_entry(&a, &b, &u).unwrap();
            prop_assert_eq!(ab, v_entry(&b, &a, &u).unwrap());
            let mut a2 = a.clone();
            a2[k] = (a2[k] + bump).min(1.0);
            prop_assert!(v_entry(&a2, &b, &u).unwrap() <= ab);
        }

        #[test]
        fn gram_psd(pts in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 2), 1..15),
                    c in prop::collection::vec(-3.0..3.0f64, 15)) {
            let m = DMatrix::from_fn(pts.len(), 2, |i, k| pts[i][k]);
            let v = self_v(&m, &[1.0, 1.0]).unwrap();
            let c = DVector::from_iterator(pts.len(), c.into_iter().take(pts.len()));
            prop_assert!(c.dot(&(&v * &c)) >= -1e-10 * c.norm_squared());
        }

        #[test]
        fn residual_matches_quadratic_form(
            xp in prop::collection::vec(0.0..1.0f64, 1..6),
            x in prop::collection::vec(0.0..1.0f64, 1..6),
            r in prop::collection::vec(-2.0..2.0f64, 6),
        ) {
            let s = ScaledSamples::from_unit(
                DMatrix::from_column_slice(xp.len(), 1, &xp),
                DMatrix::from_column_slice(x.len(), 1, &x),
            ).unwrap();
            let r = DVector::from_iterator(xp.len(), r.into_iter().take(xp.len()));
            // Weighted ECDF difference is a step function; integrate it piecewise.
            let mut knots: Vec<f64> = xp.iter().chain(x.iter()).copied().chain([0.0, 1.0]).collect();
            knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = xp.len() as f64;
            let l = x.len() as f64;
            let mut exact = 0.0;
            for w in knots.windows(2) {
                let t = w[0];
                let a: f64 = xp.iter().zip(r.iter()).filter(|(p, _)| t >= **p).map(|(_, ri)| ri).sum::<f64>() / n;
                let b = x.iter().filter(|p| t >= **p).count() as f64 / l;
                exact += (a - b).powi(2) * (w[1] - w[0]);
            }
            prop_assert!((l2_residual(&s, &r).unwrap() - exact).abs() < 1e-10);
        }
    }
}
