//! The seven synthetic benchmark models, their exact density ratios, and the
//! per-draw experiment loop scored by NRMSE at the denominator samples.
//!
//! | id | d  | numerator            | denominator          |
//! |----|----|----------------------|----------------------|
//! | 1  | 1  | Beta(0.5, 0.5)       | Uniform(0, 1)        |
//! | 2  | 1  | Beta(2, 2)           | Uniform(0, 1)        |
//! | 3  | 1  | Beta(2, 2)           | Beta(0.5, 0.5)       |
//! | 4  | 1  | N(2, 1/4)            | N(1, 1/2)            |
//! | 5  | 1  | Laplace(2, 1/4)      | Laplace(1, 1/2)      |
//! | 6  | 20 | N(e1, I)             | N(0, I)              |
//! | 7  | 20 | Laplace(e1, I)       | Laplace(0, I)        |
//!
//! Gaussian parameters are (mean, variance). Laplace parameters are read the
//! same way by default (variance `2 b^2`); [`LaplaceParam::Scale`] reads the
//! second parameter as the scale `b` instead.
//!
//! Sampling uses ChaCha8 seeded from the draw seed: the numerator sample is
//! drawn on stream 0 and the denominator sample on stream 1.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{fit_domain_box, scale, Role, SampleSet};
use crate::error::{Error, Result};
use crate::estimators::{fit_dre_v, fit_dre_v_nonneg, predict};
use crate::selection::{cross_validate, sigma2_grid, CvPlan, Method};

/// Smallest denominator density accepted when forming the true ratio.
pub const MIN_DENOMINATOR_DENSITY: f64 = 1e-300;

/// How the second Laplace parameter in the model table is interpreted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaplaceParam {
    /// Variance, `2 b^2`.
    #[default]
    Variance,
    /// Scale `b`.
    Scale,
}

/// A one-dimensional density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Marginal {
    Beta { a: f64, b: f64 },
    Uniform,
    Gaussian { mean: f64, var: f64 },
    Laplace { loc: f64, scale: f64 },
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation (g = 7, n = 9), accurate to ~1e-15 for x > 0.
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

impl Marginal {
    pub fn log_pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Beta { a, b } => {
                if !(x > 0.0 && x < 1.0) {
                    return f64::NEG_INFINITY;
                }
                let log_beta = ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b);
                (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - log_beta
            }
            Marginal::Uniform => {
                if (0.0..=1.0).contains(&x) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Marginal::Gaussian { mean, var } => -0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var),
            Marginal::Laplace { loc, scale } => -(2.0 * scale).ln() - (x - loc).abs() / scale,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Beta { a, b } => a / (a + b),
            Marginal::Uniform => 0.5,
            Marginal::Gaussian { mean, .. } => mean,
            Marginal::Laplace { loc, .. } => loc,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Marginal::Beta { a, b } => a * b / ((a + b).powi(2) * (a + b + 1.0)),
            Marginal::Uniform => 1.0 / 12.0,
            Marginal::Gaussian { var, .. } => var,
            Marginal::Laplace { scale, .. } => 2.0 * scale * scale,
        }
    }

    /// Beta by the ratio of two unit-scale gammas, Laplace by inverting its
    /// CDF, Gaussian by shifting and scaling a standard normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::Beta { a, b } => {
                let ga = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
                let gb = Gamma::new(b, 1.0).expect("positive shape").sample(rng);
                ga / (ga + gb)
            }
            Marginal::Uniform => rng.random::<f64>(),
            Marginal::Gaussian { mean, var } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + var.sqrt() * z
            }
            Marginal::Laplace { loc, scale } => {
                let u: f64 = Open01.sample(rng);
                let u = u - 0.5;
                loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }
}

/// A product of independent marginals.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductDensity(pub Vec<Marginal>);

impl ProductDensity {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(m, &v)| m.log_pdf(v)).sum()
    }

    fn sample_matrix(&self, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m, self.dim());
        for i in 0..m {
            for (k, marg) in self.0.iter().enumerate() {
                out[(i, k)] = marg.sample(rng);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticModel {
    pub id: u32,
    pub numerator: ProductDensity,
    pub denominator: ProductDensity,
}

impl SyntheticModel {
    /// One of the seven built-in models.
    pub fn builtin(id: u32, laplace: LaplaceParam) -> Result<Self> {
        let lap = |loc: f64, param: f64| Marginal::Laplace {
            loc,
            scale: match laplace {
                LaplaceParam::Variance => (param / 2.0).sqrt(),
                LaplaceParam::Scale => param,
            },
        };
        let shifted = |first: Marginal, rest: Marginal| {
            let mut v = vec![rest; 20];
            v[0] = first;
            ProductDensity(v)
        };
        let (numerator, denominator) = match id {
            1 => (ProductDensity(vec![Marginal::Beta { a: 0.5, b: 0.5 }]), ProductDensity(vec![Marginal::Uniform])),
            2 => (ProductDensity(vec![Marginal::Beta { a: 2.0, b: 2.0 }]), ProductDensity(vec![Marginal::Uniform])),
            3 => (
                ProductDensity(vec![Marginal::Beta { a: 2.0, b: 2.0 }]),
                ProductDensity(vec![Marginal::Beta { a: 0.5, b: 0.5 }]),
            ),
            4 => (
                ProductDensity(vec![Marginal::Gaussian { mean: 2.0, var: 0.25 }]),
                ProductDensity(vec![Marginal::Gaussian { mean: 1.0, var: 0.5 }]),
            ),
            5 => (ProductDensity(vec![lap(2.0, 0.25)]), ProductDensity(vec![lap(1.0, 0.5)])),
            6 => {
                let std = Marginal::Gaussian { mean: 0.0, var: 1.0 };
                (shifted(Marginal::Gaussian { mean: 1.0, var: 1.0 }, std), ProductDensity(vec![std; 20]))
            }
            7 => (shifted(lap(1.0, 1.0), lap(0.0, 1.0)), ProductDensity(vec![lap(0.0, 1.0); 20])),
            other => return Err(Error::UnknownModel(other)),
        };
        Ok(Self { id, numerator, denominator })
    }

    pub fn dim(&self) -> usize {
        self.numerator.dim()
    }
}

/// Draws `m` numerator and `m` denominator points.
pub fn sample_model(model: &SyntheticModel, m: usize, seed: u64) -> Result<(SampleSet, SampleSet)> {
    if m == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let num = model.numerator.sample_matrix(m, &mut rng);
    rng.set_stream(1);
    rng.set_word_pos(0);
    let den = model.denominator.sample_matrix(m, &mut rng);
    Ok((SampleSet::from_matrix(Role::Numerator, num)?, SampleSet::from_matrix(Role::Denominator, den)?))
}

/// `p1(x) / p2(x)` at each row, computed from the log-density difference.
pub fn true_ratio(model: &SyntheticModel, points: &DMatrix<f64>) -> Result<DVector<f64>> {
    if points.ncols() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), found: points.ncols() });
    }
    let floor = MIN_DENOMINATOR_DENSITY.ln();
    let mut out = DVector::zeros(points.nrows());
    for i in 0..points.nrows() {
        let x: Vec<f64> = points.row(i).iter().copied().collect();
        let lp2 = model.denominator.log_pdf(&x);
        if !(lp2 >= floor) {
            return Err(Error::Underflow { index: i });
        }
        out[i] = (model.numerator.log_pdf(&x) - lp2).exp();
    }
    Ok(out)
}

/// `|estimate - truth|_2 / |truth|_2`.
pub fn nrmse(estimate: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch { expected: truth.len(), found: estimate.len() });
    }
    let norm = truth.norm();
    if !(norm > 0.0) {
        return Err(Error::ZeroNorm);
    }
    Ok((estimate - truth).norm() / norm)
}

/// Protocol knobs shared by every draw of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOptions {
    pub folds: usize,
    pub gamma_grid: Vec<f64>,
    /// Bandwidth candidates as multiples of the median pairwise squared distance.
    pub sigma2_multipliers: Vec<f64>,
    pub margin: f64,
    /// Constrain DRE-V point values to be nonnegative.
    pub nonneg: bool,
    pub laplace: LaplaceParam,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            folds: crate::selection::DEFAULT_FOLDS,
            gamma_grid: crate::selection::default_gamma_grid(),
            sigma2_multipliers: crate::selection::DEFAULT_SIGMA2_MULTIPLIERS.to_vec(),
            margin: 0.0,
            nonneg: false,
            laplace: LaplaceParam::Variance,
        }
    }
}

/// Outcome of one draw.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub model: u32,
    pub m: usize,
    pub method: Method,
    pub draw: usize,
    pub seed: u64,
    pub gamma_selected: Option<f64>,
    pub sigma2_selected: Option<f64>,
    pub nrmse: Option<f64>,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

impl ExperimentRecord {
    pub fn is_ok(&self) -> bool {
        self.nrmse.is_some()
    }
}

struct DrawResult {
    gamma: f64,
    sigma2: Option<f64>,
    nrmse: f64,
}

/// Samples, scales, cross-validates, refits and scores a single draw.
pub fn run_draw(model: &SyntheticModel, m: usize, method: Method, seed: u64, opts: &ExperimentOptions) -> Result<(f64, Option<f64>, f64)> {
    let r = draw(model, m, method, seed, opts)?;
    Ok((r.gamma, r.sigma2, r.nrmse))
}

fn draw(model: &SyntheticModel, m: usize, method: Method, seed: u64, opts: &ExperimentOptions) -> Result<DrawResult> {
    let (num, den) = sample_model(model, m, seed)?;
    let domain = fit_domain_box(&num, &den, opts.margin)?;
    let s = scale(&num, &den, &domain)?;
    let sigma2_grid = if method.uses_sigma2() { Some(sigma2_grid(&s, &opts.sigma2_multipliers)?) } else { None };
    let plan = CvPlan { k: opts.folds, gamma_grid: opts.gamma_grid.clone(), sigma2_grid, seed };
    let report = cross_validate(&s, method, &plan)?;
    let estimate = match method {
        Method::DreV if opts.nonneg => fit_dre_v_nonneg(&s, report.selected_gamma)?,
        Method::DreV => fit_dre_v(&s, report.selected_gamma)?,
        _ => report.estimate,
    };
    let predicted = predict(&estimate, den.points())?;
    let truth = true_ratio(model, den.points())?;
    Ok(DrawResult { gamma: report.selected_gamma, sigma2: report.selected_sigma2, nrmse: nrmse(&predicted, &truth)? })
}

/// Runs `draws` independent draws; draw `i` uses seed `base_seed + i`.
/// Failed draws are recorded rather than aborting the batch.
pub fn run_experiment(
    model_id: u32,
    m: usize,
    method: Method,
    draws: usize,
    opts: &ExperimentOptions,
    base_seed: u64,
) -> Result<Vec<ExperimentRecord>> {
    use rayon::prelude::*;
    let model = SyntheticModel::builtin(model_id, opts.laplace)?;
    Ok((0..draws)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            let base = ExperimentRecord {
                model: model_id,
                m,
                method,
                draw: i,
                seed,
                gamma_selected: None,
                sigma2_selected: None,
                nrmse: None,
                status: String::new(),
            };
            match draw(&model, m, method, seed, opts) {
                Ok(r) => ExperimentRecord {
                    gamma_selected: Some(r.gamma),
                    sigma2_selected: r.sigma2,
                    nrmse: Some(r.nrmse),
                    status: "ok".into(),
                    ..base
                },
                Err(e) => ExperimentRecord { status: format!("failed: {e}"), ..base },
            }
        })
        .collect())
}

/// Mean and sample standard deviation (n - 1 denominator) of the successful draws.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub model: u32,
    pub m: usize,
    pub method: Method,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub draws: usize,
    pub failures: usize,
}

pub fn summarize(records: &[ExperimentRecord]) -> Option<CellSummary> {
    let first = records.first()?;
    let vals: Vec<f64> = records.iter().filter_map(|r| r.nrmse).collect();
    let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let std = mean.filter(|_| vals.len() > 1).map(|mu| {
        (vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
    });
    Some(CellSummary {
        model: first.model,
        m: first.m,
        method: first.method,
        mean,
        std,
        draws: records.len(),
        failures: records.len() - vals.len(),
    })
}
