//! k-fold cross-validation of the regularization constant (and the RBF
//! bandwidth) under the least-squares criterion
//! `J = 0.5 sum r(z')^2 - (n/l) sum r(z)` evaluated on held-out denominator
//! points `z'` and numerator points `z`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::ScaledSamples;
use crate::error::{Error, Result};
use crate::estimators::{fit_dre_v, predict_scaled, PreparedSystem, RatioEstimate};
use crate::kernels::{median_sq_distance, KernelSpec};

/// Default regularization grid: 21 log-spaced points (half-decade steps) from 1e-6 to 1e4.
pub const DEFAULT_GAMMA_MIN: f64 = 1e-6;
pub const DEFAULT_GAMMA_MAX: f64 = 1e4;
pub const DEFAULT_GAMMA_COUNT: usize = 21;
/// RBF bandwidth candidates as multiples of the median pairwise squared distance.
pub const DEFAULT_SIGMA2_MULTIPLIERS: [f64; 6] = [0.1, 0.25, 0.5, 1.0, 2.0, 4.0];
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DreV,
    DreVkInk,
    DreVkRbf,
    /// Identity-matrix baseline with an RBF kernel.
    UlsifLike,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::DreV, Method::DreVkInk, Method::DreVkRbf, Method::UlsifLike];

    pub fn name(self) -> &'static str {
        match self {
            Method::DreV => "dre-v",
            Method::DreVkInk => "dre-vk-ink",
            Method::DreVkRbf => "dre-vk-rbf",
            Method::UlsifLike => "ulsif-like",
        }
    }

    /// Whether the method cross-validates an RBF bandwidth.
    pub fn uses_sigma2(self) -> bool {
        matches!(self, Method::DreVkRbf | Method::UlsifLike)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}' (expected one of dre-v, dre-vk-ink, dre-vk-rbf, ulsif-like)")))
    }
}

/// `count` log-spaced values from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0) || !(max >= min) || !max.is_finite() || count == 0 {
        return Err(Error::InvalidArgument(format!("invalid log grid: min {min}, max {max}, count {count}")));
    }
    if count == 1 {
        return Ok(vec![min]);
    }
    let (lo, hi) = (min.log10(), max.log10());
    Ok((0..count).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64)).collect())
}

pub fn default_gamma_grid() -> Vec<f64> {
    log_grid(DEFAULT_GAMMA_MIN, DEFAULT_GAMMA_MAX, DEFAULT_GAMMA_COUNT).expect("default grid is valid")
}

/// Bandwidth candidates `multipliers * median pairwise squared distance` of
/// the pooled scaled data.
pub fn sigma2_grid(s: &ScaledSamples, multipliers: &[f64]) -> Result<Vec<f64>> {
    let mut pooled = DMatrix::zeros(s.n() + s.l(), s.dim());
    pooled.rows_mut(0, s.n()).copy_from(&s.x_prime);
    pooled.rows_mut(s.n(), s.l()).copy_from(&s.x);
    let med = median_sq_distance(&pooled).filter(|m| *m > 0.0).unwrap_or(1.0);
    let grid: Vec<f64> = multipliers.iter().map(|c| c * med).collect();
    if grid.is_empty() || grid.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
        return Err(Error::InvalidArgument("bandwidth multipliers must be positive".into()));
    }
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvPlan {
    pub k: usize,
    /// Strictly ascending, positive.
    pub gamma_grid: Vec<f64>,
    /// Absolute RBF bandwidths; `None` uses the median heuristic grid.
    pub sigma2_grid: Option<Vec<f64>>,
    pub seed: u64,
}

impl CvPlan {
    /// Five folds, the default gamma grid and the median-heuristic bandwidths.
    pub fn with_seed(seed: u64) -> Self {
        Self { k: DEFAULT_FOLDS, gamma_grid: default_gamma_grid(), sigma2_grid: None, seed }
    }

    pub fn validate(&self, n: usize, l: usize) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 folds, got {}", self.k)));
        }
        if self.k > n.min(l) {
            return Err(Error::InvalidArgument(format!("{} folds exceed sample sizes n = {n}, l = {l}", self.k)));
        }
        if self.gamma_grid.is_empty() || self.gamma_grid.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(Error::InvalidArgument("gamma grid must be nonempty and positive".into()));
        }
        if self.gamma_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("gamma grid must be strictly ascending".into()));
        }
        if let Some(g) = &self.sigma2_grid {
            if g.is_empty() || g.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument("sigma2 grid must be nonempty and positive".into()));
            }
        }
        Ok(())
    }
}

/// Disjoint index sets covering each sample set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Folds {
    pub denominator: Vec<Vec<usize>>,
    pub numerator: Vec<Vec<usize>>,
}

impl Folds {
    pub fn k(&self) -> usize {
        self.denominator.len()
    }

    fn complement(parts: &[Vec<usize>], fold: usize) -> Vec<usize> {
        let mut out: Vec<usize> =
            parts.iter().enumerate().filter(|(i, _)| *i != fold).flat_map(|(_, p)| p.iter().copied()).collect();
        out.sort_unstable();
        out
    }
}

fn split(len: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    let (base, extra) = (len / k, len % k);
    let mut parts = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut part = idx[start..start + size].to_vec();
        part.sort_unstable();
        parts.push(part);
        start += size;
    }
    parts
}

/// Shuffles both index sets independently (ChaCha8 streams 0 and 1 of `seed`)
/// and splits each into `k` parts whose sizes differ by at most one.
pub fn make_folds(n: usize, l: usize, k: usize, seed: u64) -> Result<Folds> {
    if k < 1 || k > n.min(l) {
        return Err(Error::InvalidArgument(format!("{k} folds do not fit sample sizes n = {n}, l = {l}")));
    }
    let mut den_rng = ChaCha8Rng::seed_from_u64(seed);
    den_rng.set_stream(0);
    let mut num_rng = ChaCha8Rng::seed_from_u64(seed);
    num_rng.set_stream(1);
    Ok(Folds { denominator: split(n, k, &mut den_rng), numerator: split(l, k, &mut num_rng) })
}

/// Held-out least-squares criterion `0.5 sum r(z')^2 - n_over_l sum r(z)`,
/// unnormalized. Points are in the fitted (scaled) coordinates.
pub fn ls_criterion(
    est: &RatioEstimate,
    holdout_num: &DMatrix<f64>,
    holdout_den: &DMatrix<f64>,
    n_over_l: f64,
) -> Result<f64> {
    let den = predict_scaled(est, holdout_den)?;
    let num = predict_scaled(est, holdout_num)?;
    Ok(0.5 * den.norm_squared() - n_over_l * num.sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateScore {
    pub gamma: f64,
    pub sigma2: Option<f64>,
    /// Sum of the held-out criterion over folds; `None` if any fold failed.
    pub total: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug)]
pub struct CvReport {
    pub method: Method,
    pub candidates: Vec<CandidateScore>,
    pub selected_gamma: f64,
    pub selected_sigma2: Option<f64>,
    pub folds: Folds,
    /// Refit on all data at the selected candidate. DRE-V is refit as point
    /// values at the denominator samples.
    pub estimate: RatioEstimate,
}

fn kernel_for(method: Method, dim: usize, sigma2: Option<f64>) -> Result<Option<KernelSpec>> {
    Ok(match method {
        Method::DreV => None,
        Method::DreVkInk => Some(KernelSpec::ink_spline(dim)),
        Method::DreVkRbf | Method::UlsifLike => {
            Some(KernelSpec::rbf(dim, sigma2.expect("bandwidth methods always carry a sigma2"))?)
        }
    })
}

/// Builds the gamma-independent system for `method` on `s`.
pub(crate) fn prepare(method: Method, s: &ScaledSamples, sigma2: Option<f64>) -> Result<PreparedSystem> {
    let kernel = kernel_for(method, s.dim(), sigma2)?;
    match (method, kernel) {
        (Method::DreV, _) => PreparedSystem::dre_v_expansion(s),
        (Method::DreVkInk | Method::DreVkRbf, Some(k)) => PreparedSystem::dre_vk(s, &k),
        (Method::UlsifLike, Some(k)) => PreparedSystem::ulsif_like(s, &k),
        _ => unreachable!("kernel methods always have a kernel"),
    }
}

/// Fits `method` at a fixed candidate on all of `s`, in the form cross-validation uses.
pub fn fit_candidate(method: Method, s: &ScaledSamples, gamma: f64, sigma2: Option<f64>) -> Result<RatioEstimate> {
    prepare(method, s, sigma2)?.fit(s, gamma)
}

/// Fits every gamma in `grid` on a training set at a fixed bandwidth.
type GridFitter<'a> = dyn Fn(&ScaledSamples, Option<f64>, &[f64]) -> Vec<Result<RatioEstimate>> + Sync + 'a;

fn fit_grid(method: Method) -> impl Fn(&ScaledSamples, Option<f64>, &[f64]) -> Vec<Result<RatioEstimate>> + Sync {
    move |train, sigma2, grid| match prepare(method, train, sigma2) {
        Ok(system) => grid.iter().map(|&g| system.fit(train, g)).collect(),
        Err(e) => {
            let msg = e.to_string();
            grid.iter().map(|_| Err(Error::InvalidArgument(msg.clone()))).collect()
        }
    }
}

/// Sums the held-out criterion over folds for every (bandwidth, gamma) pair,
/// bandwidth-major.
fn score_candidates(
    s: &ScaledSamples,
    plan: &CvPlan,
    folds: &Folds,
    sigmas: &[Option<f64>],
    fitter: &GridFitter<'_>,
) -> Vec<CandidateScore> {
    let n_over_l = s.n() as f64 / s.l() as f64;
    let k = folds.k();
    let jobs: Vec<(usize, usize)> = (0..sigmas.len()).flat_map(|si| (0..k).map(move |f| (si, f))).collect();
    let per_job: Vec<Vec<std::result::Result<f64, String>>> = jobs
        .par_iter()
        .map(|&(si, f)| {
            let train = match s.subset(
                &Folds::complement(&folds.denominator, f),
                &Folds::complement(&folds.numerator, f),
            ) {
                Ok(t) => t,
                Err(e) => return vec![Err(format!("fold {f}: {e}")); plan.gamma_grid.len()],
            };
            let hold_den = s.x_prime.select_rows(&folds.denominator[f]);
            let hold_num = s.x.select_rows(&folds.numerator[f]);
            fitter(&train, sigmas[si], &plan.gamma_grid)
                .into_iter()
                .map(|fit| {
                    let j = fit
                        .and_then(|est| ls_criterion(&est, &hold_num, &hold_den, n_over_l))
                        .map_err(|e| format!("fold {f}: {e}"))?;
                    if j.is_finite() {
                        Ok(j)
                    } else {
                        Err(format!("fold {f}: non-finite criterion"))
                    }
                })
                .collect()
        })
        .collect();

    let mut candidates = Vec::with_capacity(sigmas.len() * plan.gamma_grid.len());
    for (si, sigma2) in sigmas.iter().enumerate() {
        for (gi, &gamma) in plan.gamma_grid.iter().enumerate() {
            let mut total = 0.0;
            let mut failure = None;
            for f in 0..k {
                match &per_job[si * k + f][gi] {
                    Ok(j) => total += j,
                    Err(e) => {
                        failure = Some(e.clone());
                        break;
                    }
                }
            }
            let total = failure.is_none().then_some(total);
            candidates.push(CandidateScore { gamma, sigma2: *sigma2, total, failure });
        }
    }
    candidates
}

/// Minimal total criterion; ties go to the larger gamma, then the larger bandwidth.
fn select(candidates: &[CandidateScore]) -> Result<(f64, Option<f64>)> {
    candidates
        .iter()
        .filter_map(|c| c.total.map(|t| (t, c)))
        .min_by(|(ta, a), (tb, b)| {
            ta.total_cmp(tb)
                .then(b.gamma.total_cmp(&a.gamma))
                .then(b.sigma2.unwrap_or(0.0).total_cmp(&a.sigma2.unwrap_or(0.0)))
        })
        .map(|(_, c)| (c.gamma, c.sigma2))
        .ok_or_else(|| Error::NoValidCandidate {
            failures: candidates
                .iter()
                .map(|c| format!("gamma {:e}: {}", c.gamma, c.failure.as_deref().unwrap_or("no score")))
                .collect(),
        })
}

/// Scores every (bandwidth, gamma) candidate by k-fold cross-validation,
/// selects the minimizer of the summed criterion and refits on all data.
pub fn cross_validate(s: &ScaledSamples, method: Method, plan: &CvPlan) -> Result<CvReport> {
    plan.validate(s.n(), s.l())?;
    let folds = make_folds(s.n(), s.l(), plan.k, plan.seed)?;
    let sigmas: Vec<Option<f64>> = if method.uses_sigma2() {
        match &plan.sigma2_grid {
            Some(g) => g.iter().copied().map(Some).collect(),
            None => sigma2_grid(s, &DEFAULT_SIGMA2_MULTIPLIERS)?.into_iter().map(Some).collect(),
        }
    } else {
        vec![None]
    };
    let candidates = score_candidates(s, plan, &folds, &sigmas, &fit_grid(method));
    let (selected_gamma, selected_sigma2) = select(&candidates)?;
    // The expansion form of DRE-V equals the point-value solution at the
    // samples; the final fit uses the better-conditioned point-value system.
    let estimate = match method {
        Method::DreV => fit_dre_v(s, selected_gamma)?,
        _ => fit_candidate(method, s, selected_gamma, selected_sigma2)?,
    };
    Ok(CvReport { method, candidates, selected_gamma, selected_sigma2, folds, estimate })
}
