//! Kernels for the RKHS estimators: the linear spline kernel with infinitely
//! many knots (parameter-free, defined on nonnegative inputs) and the Gaussian
//! RBF kernel.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelKind {
    /// Coordinate-wise product of the one-dimensional linear INK-spline kernel.
    InkSplineLinear,
    /// `exp(-|x - y|^2 / (2 sigma2))`.
    Rbf { sigma2: f64 },
}

/// A kernel together with the input dimension it accepts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    kind: KernelKind,
    dim: usize,
}

impl KernelSpec {
    pub fn ink_spline(dim: usize) -> Self {
        Self { kind: KernelKind::InkSplineLinear, dim }
    }

    pub fn rbf(dim: usize, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!("RBF bandwidth must be positive, got {sigma2}")));
        }
        Ok(Self { kind: KernelKind::Rbf { sigma2 }, dim })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The RBF bandwidth, if this is an RBF kernel.
    pub fn sigma2(&self) -> Option<f64> {
        match self.kind {
            KernelKind::Rbf { sigma2 } => Some(sigma2),
            KernelKind::InkSplineLinear => None,
        }
    }
}

/// One-dimensional linear INK-spline kernel,
/// `1 + xy + |x - y| min(x,y)^2 / 2 + min(x,y)^3 / 3`.
pub fn ink1(x: f64, y: f64) -> Result<f64> {
    if !(x >= 0.0) || !(y >= 0.0) {
        return Err(Error::Domain(format!("INK-spline inputs must be nonnegative, got ({x}, {y})")));
    }
    Ok(ink1_unchecked(x, y))
}

#[inline]
fn ink1_unchecked(x: f64, y: f64) -> f64 {
    let m = x.min(y);
    1.0 + x * y + 0.5 * (x - y).abs() * m * m + m * m * m / 3.0
}

#[inline]
fn eval_unchecked(kind: KernelKind, x: impl Iterator<Item = f64>, y: impl Iterator<Item = f64>) -> f64 {
    match kind {
        KernelKind::InkSplineLinear => x.zip(y).map(|(a, b)| ink1_unchecked(a, b)).product(),
        KernelKind::Rbf { sigma2 } => {
            let d2: f64 = x.zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / (2.0 * sigma2)).exp()
        }
    }
}

/// Evaluates the kernel at a pair of points.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    for p in [x, y] {
        if p.len() != spec.dim {
            return Err(Error::DimensionMismatch { expected: spec.dim, found: p.len() });
        }
    }
    if spec.kind == KernelKind::InkSplineLinear {
        if let Some(v) = x.iter().chain(y).find(|v| !(**v >= 0.0)) {
            return Err(Error::Domain(format!("INK-spline inputs must be nonnegative, got {v}")));
        }
    }
    Ok(eval_unchecked(spec.kind, x.iter().copied(), y.iter().copied()))
}

fn check_points(spec: &KernelSpec, points: &DMatrix<f64>) -> Result<()> {
    if points.ncols() != spec.dim {
        return Err(Error::DimensionMismatch { expected: spec.dim, found: points.ncols() });
    }
    if spec.kind == KernelKind::InkSplineLinear {
        if let Some(v) = points.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Domain(format!("INK-spline inputs must be nonnegative, got {v}")));
        }
    }
    Ok(())
}

/// Kernel matrix of a point set (rows are points). Symmetric by construction.
pub fn gram(spec: &KernelSpec, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_points(spec, points)?;
    let m = points.nrows();
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = eval_unchecked(spec.kind, points.row(i).iter().copied(), points.row(j).iter().copied());
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Kernel values between every row of `rows` and every row of `cols`.
pub fn cross_gram(spec: &KernelSpec, rows: &DMatrix<f64>, cols: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_points(spec, rows)?;
    check_points(spec, cols)?;
    Ok(DMatrix::from_fn(rows.nrows(), cols.nrows(), |i, j| {
        eval_unchecked(spec.kind, rows.row(i).iter().copied(), cols.row(j).iter().copied())
    }))
}

/// Median of the pairwise squared Euclidean distances between distinct rows.
pub fn median_sq_distance(points: &DMatrix<f64>) -> Option<f64> {
    let m = points.nrows();
    let mut d2 = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            d2.push((points.row(i) - points.row(j)).norm_squared());
        }
    }
    if d2.is_empty() {
        return None;
    }
    d2.sort_by(f64::total_cmp);
    let mid = d2.len() / 2;
    Some(if d2.len() % 2 == 0 { 0.5 * (d2[mid - 1] + d2[mid]) } else { d2[mid] })
}
