//! Experiment configuration and execution: the cross product of synthetic
//! models, sample sizes and methods, written out as a per-draw CSV, a
//! per-cell JSON summary and a mean (std) table.
//!
//! Configuration is TOML with three sections; every key is optional and
//! unknown keys are rejected:
//!
//! ```toml
//! [experiment]
//! models = [1, 2, 3, 4, 5, 6, 7]
//! sizes_1d = [50, 100, 200]      # sample sizes for the one-dimensional models
//! sizes_20d = [100, 200, 500]    # sample sizes for the 20-dimensional models
//! methods = ["dre-v", "dre-vk-ink", "dre-vk-rbf", "ulsif-like"]
//! draws = 20
//! folds = 5
//! seed = 1
//! margin = 0.0
//! nonneg = false
//! laplace_param = "variance"     # or "scale"
//!
//! [grid]
//! gamma_min = 1e-6
//! gamma_max = 1e4
//! gamma_count = 21
//! sigma2_multipliers = [0.1, 0.25, 0.5, 1.0, 2.0, 4.0]
//!
//! [output]
//! csv = "results.csv"
//! json = "results.json"
//! ```

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{fit_domain_box, scale, Role, SampleSet};
use crate::error::{Error, Result};
use crate::estimators::{fit_dre_v, fit_dre_v_nonneg, predict};
use crate::selection::{
    cross_validate, fit_candidate, log_grid, sigma2_grid, CvPlan, Method, DEFAULT_FOLDS, DEFAULT_GAMMA_COUNT,
    DEFAULT_GAMMA_MAX, DEFAULT_GAMMA_MIN, DEFAULT_SIGMA2_MULTIPLIERS,
};
use crate::synthetic::{run_experiment, summarize, CellSummary, ExperimentOptions, ExperimentRecord, LaplaceParam, SyntheticModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub models: Vec<u32>,
    pub sizes_1d: Vec<usize>,
    pub sizes_20d: Vec<usize>,
    pub methods: Vec<Method>,
    pub draws: usize,
    pub folds: usize,
    pub seed: u64,
    pub margin: f64,
    pub nonneg: bool,
    pub laplace_param: LaplaceParam,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            models: (1..=7).collect(),
            sizes_1d: vec![50, 100, 200],
            sizes_20d: vec![100, 200, 500],
            methods: Method::ALL.to_vec(),
            draws: 20,
            folds: DEFAULT_FOLDS,
            seed: 1,
            margin: 0.0,
            nonneg: false,
            laplace_param: LaplaceParam::Variance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_count: usize,
    pub sigma2_multipliers: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            gamma_min: DEFAULT_GAMMA_MIN,
            gamma_max: DEFAULT_GAMMA_MAX,
            gamma_count: DEFAULT_GAMMA_COUNT,
            sigma2_multipliers: DEFAULT_SIGMA2_MULTIPLIERS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { csv: Some("results.csv".into()), json: Some("results.json".into()) }
    }
}

/// A fully resolved experiment configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub grid: GridSection,
    pub output: OutputSection,
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigOverrides {
    pub models: Option<Vec<u32>>,
    /// Replaces both size lists.
    pub sizes: Option<Vec<usize>>,
    pub methods: Option<Vec<Method>>,
    pub draws: Option<usize>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub margin: Option<f64>,
    /// `true` switches the nonnegativity constraint on; `false` leaves the file value.
    pub nonneg: bool,
    pub out_csv: Option<PathBuf>,
    pub out_json: Option<PathBuf>,
}

/// Parses TOML text (possibly empty), applies `overrides`, fills defaults
/// and validates the result.
pub fn parse_config(text: &str, overrides: &ConfigOverrides) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let ex = &mut config.experiment;
    let o = overrides.clone();
    if let Some(v) = o.models {
        ex.models = v;
    }
    if let Some(v) = o.sizes {
        ex.sizes_1d = v.clone();
        ex.sizes_20d = v;
    }
    if let Some(v) = o.methods {
        ex.methods = v;
    }
    if let Some(v) = o.draws {
        ex.draws = v;
    }
    if let Some(v) = o.folds {
        ex.folds = v;
    }
    if let Some(v) = o.seed {
        ex.seed = v;
    }
    if let Some(v) = o.margin {
        ex.margin = v;
    }
    ex.nonneg |= o.nonneg;
    if o.out_csv.is_some() {
        config.output.csv = o.out_csv;
    }
    if o.out_json.is_some() {
        config.output.json = o.out_json;
    }
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let ex = &self.experiment;
        let bad = |msg: String| Err(Error::Config(msg));
        if ex.models.is_empty() || ex.sizes_1d.is_empty() || ex.sizes_20d.is_empty() || ex.methods.is_empty() {
            return bad("models, sizes_1d, sizes_20d and methods must be nonempty".into());
        }
        if let Some(id) = ex.models.iter().find(|id| !(1..=7).contains(*id)) {
            return bad(format!("unknown model id {id} (expected 1 to 7)"));
        }
        if ex.draws < 1 {
            return bad("draws must be at least 1".into());
        }
        if ex.folds < 2 {
            return bad("folds must be at least 2".into());
        }
        if let Some(m) = ex.sizes_1d.iter().chain(&ex.sizes_20d).find(|m| **m < ex.folds) {
            return bad(format!("sample size {m} is smaller than the number of folds {}", ex.folds));
        }
        if !(ex.margin >= 0.0) || !ex.margin.is_finite() {
            return bad(format!("margin must be finite and nonnegative, got {}", ex.margin));
        }
        self.gamma_grid()?;
        if self.grid.sigma2_multipliers.is_empty() || self.grid.sigma2_multipliers.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return bad("sigma2_multipliers must be a nonempty list of positive numbers".into());
        }
        Ok(())
    }

    pub fn gamma_grid(&self) -> Result<Vec<f64>> {
        log_grid(self.grid.gamma_min, self.grid.gamma_max, self.grid.gamma_count).map_err(|e| Error::Config(e.to_string()))
    }

    /// The resolved configuration as TOML; parsing it back yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn options(&self) -> Result<ExperimentOptions> {
        Ok(ExperimentOptions {
            folds: self.experiment.folds,
            gamma_grid: self.gamma_grid()?,
            sigma2_multipliers: self.grid.sigma2_multipliers.clone(),
            margin: self.experiment.margin,
            nonneg: self.experiment.nonneg,
            laplace: self.experiment.laplace_param,
        })
    }

    /// Every (model, m, method) cell, sorted.
    pub fn cells(&self) -> Result<Vec<(u32, usize, Method)>> {
        let ex = &self.experiment;
        let mut models = ex.models.clone();
        models.sort_unstable();
        models.dedup();
        let mut methods = ex.methods.clone();
        methods.sort_unstable();
        methods.dedup();
        let mut cells = Vec::new();
        for model in models {
            let dim = SyntheticModel::builtin(model, ex.laplace_param)?.dim();
            let mut sizes = if dim == 1 { ex.sizes_1d.clone() } else { ex.sizes_20d.clone() };
            sizes.sort_unstable();
            sizes.dedup();
            for m in sizes {
                cells.extend(methods.iter().map(|&method| (model, m, method)));
            }
        }
        Ok(cells)
    }
}

/// Per-draw records and per-cell summaries, both in (model, m, method) order.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<ExperimentRecord>,
    pub summaries: Vec<CellSummary>,
}

impl RunOutcome {
    /// 0 when every cell has at least one successful draw, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.summaries.iter().all(|s| s.failures < s.draws) {
            0
        } else {
            2
        }
    }
}

/// Runs every cell of the configuration. Cells and draws run concurrently;
/// results are assembled in sorted order.
pub fn run_cells(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let opts = config.options()?;
    let ex = &config.experiment;
    let per_cell: Vec<Vec<ExperimentRecord>> = config
        .cells()?
        .into_par_iter()
        .map(|(model, m, method)| run_experiment(model, m, method, ex.draws, &opts, ex.seed))
        .collect::<Result<_>>()?;
    let summaries = per_cell.iter().filter_map(|r| summarize(r)).collect();
    Ok(RunOutcome { records: per_cell.into_iter().flatten().collect(), summaries })
}

pub const CSV_HEADER: [&str; 9] = ["model", "m", "method", "draw", "seed", "gamma_selected", "sigma2_selected", "nrmse", "status"];

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per draw; a missing value is an empty field.
pub fn write_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.model.to_string(),
            r.m.to_string(),
            r.method.to_string(),
            r.draw.to_string(),
            r.seed.to_string(),
            opt_num(r.gamma_selected),
            opt_num(r.sigma2_selected),
            opt_num(r.nrmse),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct JsonReport<'a> {
    config: &'a ExperimentConfig,
    config_toml: String,
    cells: &'a [CellSummary],
}

/// Per-cell `mean`, `std` and `failures`, plus the resolved configuration.
pub fn write_json<W: Write>(outcome: &RunOutcome, config: &ExperimentConfig, mut out: W) -> Result<()> {
    let report = JsonReport { config, config_toml: config.to_toml(), cells: &outcome.summaries };
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    Ok(())
}

/// Mean (std) of NRMSE per cell: one row per (model, m), one column per
/// method. Cells with failed draws are marked `*`; cells with no successful
/// draw read `failed`.
pub fn format_table(summaries: &[CellSummary]) -> String {
    let mut methods: Vec<Method> = summaries.iter().map(|s| s.method).collect();
    methods.sort_unstable();
    methods.dedup();
    let mut rows: Vec<(u32, usize)> = summaries.iter().map(|s| (s.model, s.m)).collect();
    rows.sort_unstable();
    rows.dedup();
    let width = 14;
    let mut out = format!("{:<6}{:<6}", "model", "m");
    for m in &methods {
        let _ = write!(out, "{:<width$}", m.name());
    }
    out.truncate(out.trim_end().len());
    out.push('\n');
    let mut any_partial = false;
    for (model, m) in rows {
        let _ = write!(out, "{model:<6}{m:<6}");
        for method in &methods {
            let cell = summaries.iter().find(|s| s.model == model && s.m == m && s.method == *method);
            let text = match cell {
                None => String::new(),
                Some(s) => match s.mean {
                    None => "failed".to_string(),
                    Some(mean) => {
                        let std = s.std.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
                        let mark = if s.failures > 0 {
                            any_partial = true;
                            "*"
                        } else {
                            ""
                        };
                        format!("{mean:.2} ({std}){mark}")
                    }
                },
            };
            let _ = write!(out, "{text:<width$}");
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
    }
    if any_partial {
        out.push_str("* some draws failed; see the CSV status column\n");
    }
    out
}

/// Runs the experiment, writes the configured outputs and returns the
/// outcome together with the formatted table.
pub fn run(config: &ExperimentConfig) -> Result<(RunOutcome, String)> {
    let outcome = run_cells(config)?;
    if let Some(path) = &config.output.csv {
        write_csv(&outcome.records, std::fs::File::create(path)?)?;
    }
    if let Some(path) = &config.output.json {
        write_json(&outcome, config, std::io::BufWriter::new(std::fs::File::create(path)?))?;
    }
    let table = format_table(&outcome.summaries);
    Ok((outcome, table))
}

/// Reads a point file: one point per line, coordinates separated by
/// whitespace. Blank lines and lines starting with `#` are skipped.
pub fn parse_points(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut points: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse { line: i + 1, message: format!("'{tok}' is not a finite number") })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = points.first() {
            if first.len() != p.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {} coordinates, found {}", first.len(), p.len()),
                });
            }
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok(points)
}

pub fn read_points(path: &Path) -> Result<Vec<Vec<f64>>> {
    parse_points(&std::fs::read_to_string(path)?)
}

/// Settings for a one-shot fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub method: Method,
    /// Fixed regularization constant; cross-validated over `gamma_grid` when absent.
    pub gamma: Option<f64>,
    /// Fixed RBF bandwidth (in scaled units); cross-validated when absent.
    pub sigma2: Option<f64>,
    pub folds: usize,
    pub seed: u64,
    pub margin: f64,
    pub nonneg: bool,
    pub gamma_grid: Vec<f64>,
    pub sigma2_multipliers: Vec<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: Method::DreVkInk,
            gamma: None,
            sigma2: None,
            folds: DEFAULT_FOLDS,
            seed: 1,
            margin: 0.0,
            nonneg: false,
            gamma_grid: crate::selection::default_gamma_grid(),
            sigma2_multipliers: DEFAULT_SIGMA2_MULTIPLIERS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    /// Estimated ratio at each denominator point, in input order.
    pub weights: Vec<f64>,
    pub gamma: f64,
    pub sigma2: Option<f64>,
}

/// Estimates `p1 / p2` at the denominator points from raw numerator and
/// denominator samples.
pub fn fit_weights(numerator: &[Vec<f64>], denominator: &[Vec<f64>], opts: &FitOptions) -> Result<FitOutcome> {
    let num = SampleSet::new(Role::Numerator, numerator)?;
    let den = SampleSet::new(Role::Denominator, denominator)?;
    let domain = fit_domain_box(&num, &den, opts.margin)?;
    let s = scale(&num, &den, &domain)?;
    let (gamma, sigma2) = match opts.gamma {
        Some(g) if !opts.method.uses_sigma2() || opts.sigma2.is_some() => (g, opts.sigma2),
        fixed => {
            let sigma2_grid = match (opts.method.uses_sigma2(), opts.sigma2) {
                (false, _) => None,
                (true, Some(v)) => Some(vec![v]),
                (true, None) => Some(sigma2_grid(&s, &opts.sigma2_multipliers)?),
            };
            let gamma_grid = fixed.map(|g| vec![g]).unwrap_or_else(|| opts.gamma_grid.clone());
            let plan = CvPlan { k: opts.folds, gamma_grid, sigma2_grid, seed: opts.seed };
            let report = cross_validate(&s, opts.method, &plan)?;
            (report.selected_gamma, report.selected_sigma2)
        }
    };
    let estimate = match opts.method {
        Method::DreV if opts.nonneg => fit_dre_v_nonneg(&s, gamma)?,
        Method::DreV => fit_dre_v(&s, gamma)?,
        method => fit_candidate(method, &s, gamma, sigma2)?,
    };
    let weights = predict(&estimate, den.points())?.iter().copied().collect();
    Ok(FitOutcome { weights, gamma, sigma2 })
}
