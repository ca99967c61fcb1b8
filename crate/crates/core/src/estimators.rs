//! Regularized solutions of the ECDF integral equation.
//!
//! With `V''`, `V'` the overlap matrices and `1` the all-ones vector:
//!
//! * DRE-V: point values `r = (n/l) (V'' + (gamma/n) I)^-1 V' 1` at the denominator samples.
//! * DRE-VK: a kernel expansion `r(x) = sum_i alpha_i k(x'_i, x)` with
//!   `alpha = (n/l) (V'' K + gamma I)^-1 V' 1`.
//! * The cross-validation form of DRE-V: an expansion over overlap functions
//!   `r(x) = sum_i alpha_i v(x'_i, x)` with
//!   `alpha = (n/l) (V'' V'' + (gamma/n) V'')^-1 V' 1`. At the denominator
//!   samples it reproduces the DRE-V point values and it can be evaluated anywhere.
//! * A least-squares baseline obtained by swapping both overlap matrices for
//!   identities and the RKHS norm for `alpha' alpha`.
//!
//! The constant `gamma` absorbs constant factors from the stationarity
//! conditions; these are the exact solved systems, not re-derived ones.

use nalgebra::{DMatrix, DVector};

use crate::domain::{DomainBox, ScaledSamples};
use crate::error::{Error, Result};
use crate::kernels::{cross_gram, gram, KernelSpec};
use crate::linalg::{solve_nonneg, solve_regularized, ProductShiftSolver, RidgeMatrix, ShiftedSolver};
use crate::vmatrix::{build_v_matrices, cross_v};

/// Iteration cap for the nonnegative DRE-V solve.
pub const NONNEG_MAX_ITER: usize = 50_000;
/// Projected-gradient stopping tolerance for the nonnegative DRE-V solve.
pub const NONNEG_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub enum Estimate {
    /// Ratio values at the (scaled) denominator samples only.
    PointValues { r: DVector<f64>, centers: DMatrix<f64> },
    /// `r(x) = sum_i alpha_i k(center_i, x)`.
    KernelExpansion { alpha: DVector<f64>, kernel: KernelSpec, centers: DMatrix<f64> },
    /// `r(x) = sum_i alpha_i v(center_i, x, u)`.
    VExpansion { alpha: DVector<f64>, centers: DMatrix<f64>, u: Vec<f64> },
}

/// A fitted density ratio together with the regularization constant used and
/// the box that maps raw inputs into the fitted coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct RatioEstimate {
    pub estimate: Estimate,
    pub gamma: f64,
    pub domain: DomainBox,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gamma must be positive and finite, got {gamma}")))
    }
}

fn with_gamma<T>(r: Result<T>, gamma: f64) -> Result<T> {
    r.map_err(|e| match e {
        Error::Singular { residual, .. } => Error::Singular { gamma, residual },
        other => other,
    })
}

fn ratio_nl(s: &ScaledSamples) -> f64 {
    s.n() as f64 / s.l() as f64
}

/// DRE-V: solves `(V'' + (gamma/n) I) r = (n/l) V' 1`.
pub fn fit_dre_v(s: &ScaledSamples, gamma: f64) -> Result<RatioEstimate> {
    check_gamma(gamma)?;
    let vm = build_v_matrices(s)?;
    let rhs = vm.cross_row_sums() * ratio_nl(s);
    let rep = with_gamma(solve_regularized(&vm.v_dd, gamma / s.n() as f64, RidgeMatrix::Identity, &rhs), gamma)?;
    Ok(RatioEstimate {
        estimate: Estimate::PointValues { r: rep.solution, centers: s.x_prime.clone() },
        gamma,
        domain: s.domain.clone(),
    })
}

/// DRE-V with the constraint `r >= 0`: minimizes
/// `0.5 r'(V'' + (gamma/n) I) r - (n/l) r'V' 1` by projected gradient.
pub fn fit_dre_v_nonneg(s: &ScaledSamples, gamma: f64) -> Result<RatioEstimate> {
    check_gamma(gamma)?;
    let vm = build_v_matrices(s)?;
    let rhs = vm.cross_row_sums() * ratio_nl(s);
    let mut a = vm.v_dd;
    for i in 0..a.nrows() {
        a[(i, i)] += gamma / s.n() as f64;
    }
    let rep = solve_nonneg(&a, &rhs, NONNEG_MAX_ITER, NONNEG_TOL)?;
    Ok(RatioEstimate {
        estimate: Estimate::PointValues { r: rep.solution, centers: s.x_prime.clone() },
        gamma,
        domain: s.domain.clone(),
    })
}

/// Cross-validation form of DRE-V: solves
/// `(V'' V'' + (gamma/n) V'') alpha = (n/l) V' 1`.
pub fn fit_dre_v_expansion(s: &ScaledSamples, gamma: f64) -> Result<RatioEstimate> {
    check_gamma(gamma)?;
    PreparedSystem::dre_v_expansion(s)?.fit(s, gamma)
}

/// DRE-VK: solves `(V'' K + gamma I) alpha = (n/l) V' 1` with `K` the kernel
/// matrix of the denominator samples.
pub fn fit_dre_vk(s: &ScaledSamples, kernel: &KernelSpec, gamma: f64) -> Result<RatioEstimate> {
    check_gamma(gamma)?;
    PreparedSystem::dre_vk(s, kernel)?.fit(s, gamma)
}

/// The `n x l` rectangular identity applied to the ones vector: ones in the
/// first `min(n, l)` entries.
fn rect_identity_ones(n: usize, l: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| if i < l { 1.0 } else { 0.0 })
}

/// Least-squares baseline: `V''` and `V'` replaced by identities and the RKHS
/// norm by `alpha' alpha`, giving `(K K + gamma I) alpha = (n/l) K I_{n x l} 1`.
///
/// The numerator samples enter only through the factor `n/l` and the
/// cross-validation criterion.
pub fn fit_ulsif_like(s: &ScaledSamples, kernel: &KernelSpec, gamma: f64) -> Result<RatioEstimate> {
    check_gamma(gamma)?;
    PreparedSystem::ulsif_like(s, kernel)?.fit(s, gamma)
}

/// The gamma-independent parts of an expansion fit, built once per training
/// set so a sweep over gamma only pays for the solves.
pub(crate) enum PreparedSystem {
    DreVExpansion { v_dd: ProductShiftSolver, rhs: DVector<f64> },
    DreVk { kernel: KernelSpec, vk: ShiftedSolver, rhs: DVector<f64> },
    UlsifLike { kernel: KernelSpec, kk: ShiftedSolver, rhs: DVector<f64> },
}

impl PreparedSystem {
    pub(crate) fn dre_v_expansion(s: &ScaledSamples) -> Result<Self> {
        let vm = build_v_matrices(s)?;
        let rhs = vm.cross_row_sums() * ratio_nl(s);
        Ok(Self::DreVExpansion { v_dd: ProductShiftSolver::new(vm.v_dd)?, rhs })
    }

    pub(crate) fn dre_vk(s: &ScaledSamples, kernel: &KernelSpec) -> Result<Self> {
        let vm = build_v_matrices(s)?;
        let k = gram(kernel, &s.x_prime)?;
        let rhs = vm.cross_row_sums() * ratio_nl(s);
        Ok(Self::DreVk { kernel: *kernel, vk: ShiftedSolver::new(&vm.v_dd * &k)?, rhs })
    }

    pub(crate) fn ulsif_like(s: &ScaledSamples, kernel: &KernelSpec) -> Result<Self> {
        let k = gram(kernel, &s.x_prime)?;
        let rhs = &k * rect_identity_ones(s.n(), s.l()) * ratio_nl(s);
        Ok(Self::UlsifLike { kernel: *kernel, kk: ShiftedSolver::new(&k * &k)?, rhs })
    }

    /// Solves for `gamma`; `s` must be the samples the system was built from.
    pub(crate) fn fit(&self, s: &ScaledSamples, gamma: f64) -> Result<RatioEstimate> {
        check_gamma(gamma)?;
        let estimate = match self {
            Self::DreVExpansion { v_dd, rhs } => {
                let rep = v_dd.solve(gamma / s.n() as f64, rhs);
                Estimate::VExpansion { alpha: with_gamma(rep, gamma)?.solution, centers: s.x_prime.clone(), u: s.domain.u() }
            }
            Self::DreVk { kernel, vk, rhs } => {
                let rep = vk.solve(gamma, rhs);
                Estimate::KernelExpansion { alpha: with_gamma(rep, gamma)?.solution, kernel: *kernel, centers: s.x_prime.clone() }
            }
            Self::UlsifLike { kernel, kk, rhs } => {
                let rep = kk.solve(gamma, rhs);
                Estimate::KernelExpansion { alpha: with_gamma(rep, gamma)?.solution, kernel: *kernel, centers: s.x_prime.clone() }
            }
        };
        Ok(RatioEstimate { estimate, gamma, domain: s.domain.clone() })
    }
}

/// Evaluates the estimate at raw points (rows), scaling them through the
/// estimate's box first.
pub fn predict(est: &RatioEstimate, points: &DMatrix<f64>) -> Result<DVector<f64>> {
    let scaled = est.domain.scale_rows(points)?;
    predict_scaled(est, &scaled)
}

/// Evaluates the estimate at points already in the fitted coordinates.
pub fn predict_scaled(est: &RatioEstimate, points: &DMatrix<f64>) -> Result<DVector<f64>> {
    match &est.estimate {
        Estimate::PointValues { r, centers } => {
            if points == centers {
                Ok(r.clone())
            } else {
                Err(Error::UnsupportedQuery)
            }
        }
        Estimate::KernelExpansion { alpha, kernel, centers } => Ok(cross_gram(kernel, points, centers)? * alpha),
        Estimate::VExpansion { alpha, centers, u } => Ok(cross_v(points, centers, u)? * alpha),
    }
}
