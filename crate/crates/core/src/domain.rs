//! Samples, the integration box, and the empirical distribution function.
//!
//! Every estimator in this crate works on data living in the unit box
//! `[0,1]^d`. Raw samples are mapped there by a per-coordinate affine map fitted
//! on the pooled numerator and denominator data, so the upper integration limit
//! is `u = (1, ..., 1)` after scaling.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance for scaled coordinates that land marginally outside `[0,1]`.
pub const BOX_TOLERANCE: f64 = 1e-12;

/// Which density a sample set was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    /// Samples from `F1`, the density in the ratio's numerator.
    Numerator,
    /// Samples from `F2`, the density in the ratio's denominator.
    Denominator,
}

/// A nonempty set of `d`-dimensional points, stored one point per row.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    points: DMatrix<f64>,
    role: Role,
}

impl SampleSet {
    /// Builds a sample set from a list of points, checking that all points share a dimension.
    pub fn new(role: Role, points: &[Vec<f64>]) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptySamples)?;
        let d = first.len();
        if d == 0 {
            return Err(Error::InvalidArgument("points must have dimension >= 1".into()));
        }
        for p in points {
            if p.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: p.len() });
            }
        }
        let points = DMatrix::from_fn(points.len(), d, |i, k| points[i][k]);
        Ok(Self { points, role })
    }

    /// Wraps a matrix whose rows are points.
    pub fn from_matrix(role: Role, points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::EmptySamples);
        }
        if points.ncols() == 0 {
            return Err(Error::InvalidArgument("points must have dimension >= 1".into()));
        }
        Ok(Self { points, role })
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

/// Axis-aligned box in raw coordinates together with the affine map onto `[0,1]^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DomainBox {
    /// Creates a box from explicit corners. Requires `lower[k] < upper[k]`.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), found: upper.len() });
        }
        if lower.is_empty() {
            return Err(Error::InvalidArgument("box must have dimension >= 1".into()));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "box coordinate {k} has lower {lo} not below upper {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit box `[0,1]^d`, for data that is already scaled.
    pub fn unit(d: usize) -> Self {
        Self { lower: vec![0.0; d], upper: vec![1.0; d] }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Upper integration limits in scaled units; always ones.
    pub fn u(&self) -> Vec<f64> {
        vec![1.0; self.dim()]
    }

    /// Maps a raw point into the unit box.
    ///
    /// Values within [`BOX_TOLERANCE`] of the box are clamped; anything
    /// further out is an [`Error::OutOfBox`].
    pub fn scale_point(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: point.len() });
        }
        point
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let s = (t - self.lower[k]) / (self.upper[k] - self.lower[k]);
                if !(s >= -BOX_TOLERANCE && s <= 1.0 + BOX_TOLERANCE) {
                    return Err(Error::OutOfBox { coord: k, value: s });
                }
                Ok(s.clamp(0.0, 1.0))
            })
            .collect()
    }

    /// Scales every row of `points`.
    pub fn scale_rows(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if points.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: points.ncols() });
        }
        let mut out = DMatrix::zeros(points.nrows(), points.ncols());
        for i in 0..points.nrows() {
            let row: Vec<f64> = points.row(i).iter().copied().collect();
            for (k, v) in self.scale_point(&row)?.into_iter().enumerate() {
                out[(i, k)] = v;
            }
        }
        Ok(out)
    }
}

/// Numerator and denominator samples mapped into `[0,1]^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledSamples {
    /// Denominator samples `x'`, `n x d`.
    pub x_prime: DMatrix<f64>,
    /// Numerator samples `x`, `l x d`.
    pub x: DMatrix<f64>,
    pub domain: DomainBox,
}

impl ScaledSamples {
    /// Wraps data that already lies in the unit box.
    pub fn from_unit(x_prime: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        if x_prime.nrows() == 0 || x.nrows() == 0 {
            return Err(Error::EmptySamples);
        }
        if x_prime.ncols() != x.ncols() {
            return Err(Error::DimensionMismatch { expected: x_prime.ncols(), found: x.ncols() });
        }
        if x_prime.ncols() == 0 {
            return Err(Error::InvalidArgument("points must have dimension >= 1".into()));
        }
        for (coord, &v) in x_prime.iter().chain(x.iter()).enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfBox { coord: coord % x.ncols().max(1), value: v });
            }
        }
        let d = x.ncols();
        Ok(Self { x_prime, x, domain: DomainBox::unit(d) })
    }

    /// Number of denominator samples.
    pub fn n(&self) -> usize {
        self.x_prime.nrows()
    }

    /// Number of numerator samples.
    pub fn l(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Restricts to the given denominator and numerator rows, keeping the box.
    pub fn subset(&self, den_rows: &[usize], num_rows: &[usize]) -> Result<Self> {
        if den_rows.is_empty() || num_rows.is_empty() {
            return Err(Error::EmptySamples);
        }
        Ok(Self {
            x_prime: self.x_prime.select_rows(den_rows),
            x: self.x.select_rows(num_rows),
            domain: self.domain.clone(),
        })
    }
}

/// Fits the box enclosing the pooled data, widened by `margin` times the
/// per-coordinate range on each side. A zero-range coordinate is widened by
/// 0.5 on each side instead.
pub fn fit_domain_box(numerator: &SampleSet, denominator: &SampleSet, margin: f64) -> Result<DomainBox> {
    if numerator.dim() != denominator.dim() {
        return Err(Error::DimensionMismatch { expected: denominator.dim(), found: numerator.dim() });
    }
    if !(margin >= 0.0) || !margin.is_finite() {
        return Err(Error::InvalidArgument(format!("margin must be a finite nonnegative number, got {margin}")));
    }
    let d = numerator.dim();
    let mut lower = Vec::with_capacity(d);
    let mut upper = Vec::with_capacity(d);
    for k in 0..d {
        let (num_col, den_col) = (numerator.points().column(k), denominator.points().column(k));
        let (lo, hi) = num_col.iter().chain(den_col.iter()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite data in coordinate {k}")));
        }
        let range = hi - lo;
        if range > 0.0 {
            lower.push(lo - margin * range);
            upper.push(hi + margin * range);
        } else {
            lower.push(lo - 0.5);
            upper.push(hi + 0.5);
        }
    }
    DomainBox::new(lower, upper)
}

/// Applies the box's affine map to both sample sets.
pub fn scale(numerator: &SampleSet, denominator: &SampleSet, domain: &DomainBox) -> Result<ScaledSamples> {
    if numerator.dim() != denominator.dim() {
        return Err(Error::DimensionMismatch { expected: denominator.dim(), found: numerator.dim() });
    }
    Ok(ScaledSamples {
        x_prime: domain.scale_rows(denominator.points())?,
        x: domain.scale_rows(numerator.points())?,
        domain: domain.clone(),
    })
}

/// Empirical CDF of `samples` (one point per row) at `query`.
///
/// A sample counts when it is dominated coordinate-wise by the query, with
/// ties counted (the step function is right-closed: `theta(0) = 1`).
pub fn ecdf_eval(samples: &DMatrix<f64>, query: &[f64]) -> Result<f64> {
    if samples.ncols() != query.len() {
        return Err(Error::DimensionMismatch { expected: samples.ncols(), found: query.len() });
    }
    if samples.nrows() == 0 {
        return Err(Error::EmptySamples);
    }
    let count = (0..samples.nrows())
        .filter(|&i| query.iter().enumerate().all(|(k, &q)| q - samples[(i, k)] >= 0.0))
        .count();
    Ok(count as f64 / samples.nrows() as f64)
}
