//! `vdre`: run the synthetic benchmark, fit importance weights from two point
//! files, or run the built-in self-checks.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use vdre::experiment::{fit_weights, parse_config, read_points, run, ConfigOverrides, FitOptions};
use vdre::selection::Method;

#[derive(Parser)]
#[command(name = "vdre", version, about = "Density ratio estimation with V-matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the synthetic benchmark over (model, m, method) cells.
    Run(RunArgs),
    /// Estimate p1/p2 at the denominator points of two point files.
    Fit(FitArgs),
    /// Check the estimators against independent reference computations.
    Validate {
        /// Seed for the random check instances.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model ids, comma separated (1-7).
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<u32>>,
    /// Sample sizes for every model, comma separated.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Methods, comma separated: dre-v, dre-vk-ink, dre-vk-rbf, ulsif-like.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// Base seed; draw i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Widen the fitted box by this fraction of the data range on each side.
    #[arg(long)]
    margin: Option<f64>,
    /// Constrain DRE-V point values to be nonnegative.
    #[arg(long)]
    nonneg: bool,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Points drawn from p1, one per line, whitespace-separated coordinates.
    #[arg(long)]
    numerator: PathBuf,
    /// Points drawn from p2, in the same format.
    #[arg(long)]
    denominator: PathBuf,
    /// Output file: one estimated ratio per denominator point.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "dre-vk-ink")]
    method: Method,
    /// Fixed regularization constant (cross-validated when absent).
    #[arg(long)]
    gamma: Option<f64>,
    /// Fixed RBF bandwidth in scaled units (cross-validated when absent).
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    margin: f64,
    #[arg(long)]
    nonneg: bool,
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
        None => String::new(),
    };
    let overrides = ConfigOverrides {
        models: args.models,
        sizes: args.sizes,
        methods: args.methods,
        draws: args.draws,
        folds: args.folds,
        seed: args.seed,
        margin: args.margin,
        nonneg: args.nonneg,
        out_csv: args.out_csv,
        out_json: args.out_json,
    };
    let config = parse_config(&text, &overrides)?;
    let (outcome, table) = run(&config)?;
    print!("{table}");
    for s in outcome.summaries.iter().filter(|s| s.failures > 0) {
        eprintln!("model {} m {} {}: {} of {} draws failed", s.model, s.m, s.method, s.failures, s.draws);
    }
    for (what, path) in [("per-draw CSV", &config.output.csv), ("summary JSON", &config.output.json)] {
        if let Some(p) = path {
            eprintln!("wrote {what} to {}", p.display());
        }
    }
    Ok(ExitCode::from(outcome.exit_code() as u8))
}

fn cmd_fit(args: FitArgs) -> Result<ExitCode> {
    let num = read_points(&args.numerator).with_context(|| format!("reading {}", args.numerator.display()))?;
    let den = read_points(&args.denominator).with_context(|| format!("reading {}", args.denominator.display()))?;
    let opts = FitOptions {
        method: args.method,
        gamma: args.gamma,
        sigma2: args.sigma2,
        folds: args.folds,
        seed: args.seed,
        margin: args.margin,
        nonneg: args.nonneg,
        ..FitOptions::default()
    };
    let fit = fit_weights(&num, &den, &opts)?;
    let mut out = String::with_capacity(fit.weights.len() * 20);
    for w in &fit.weights {
        out.push_str(&w.to_string());
        out.push('\n');
    }
    std::fs::write(&args.out, out).with_context(|| format!("writing {}", args.out.display()))?;
    match fit.sigma2 {
        Some(s2) => eprintln!("{}: gamma = {:e}, sigma2 = {:e}", args.method, fit.gamma, s2),
        None => eprintln!("{}: gamma = {:e}", args.method, fit.gamma),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(seed: u64) -> Result<ExitCode> {
    let checks = vdre::validate::run_all(seed)?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(if checks.iter().all(|c| c.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Validate { seed } => cmd_validate(seed),
    }
}
