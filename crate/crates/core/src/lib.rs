//! Density ratio estimation by regularized solution of the integral equation
//! linking the two empirical distribution functions.
//!
//! Samples are scaled into the unit box, the overlap ("V") matrices of the
//! indicator functions are formed, and one of several regularized linear
//! systems is solved for the ratio `p1(x) / p2(x)`. The regularization
//! constant (and an RBF bandwidth, where used) is chosen by k-fold
//! cross-validation under a least-squares criterion.

pub mod domain;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod kernels;
pub mod linalg;
pub mod selection;
pub mod synthetic;
pub mod validate;
pub mod vmatrix;

pub use domain::{fit_domain_box, scale, DomainBox, Role, SampleSet, ScaledSamples};
pub use error::{Error, Result};
pub use estimators::{fit_dre_v, fit_dre_v_expansion, fit_dre_v_nonneg, fit_dre_vk, fit_ulsif_like, predict, Estimate, RatioEstimate};
pub use kernels::KernelSpec;
pub use selection::{cross_validate, CvPlan, CvReport, Method};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/vmatrices.md")]
    mod vmatrices {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
