//! `sbll`: survey total estimation with spline-backfitted local linear
//! working models.

mod commands;
mod error;
mod input;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sbll", version, about = "Model-assisted estimation of finite-population totals")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// Tuning flags shared by every command that fits SBLL.
#[derive(Debug, Clone, Args)]
pub struct Tuning {
    /// Constant c of the knot rule.
    #[arg(long, default_value_t = 1.0)]
    knot_constant: f64,

    /// Use h = scale * sd(x) * n^(-1/5) instead of the plug-in rule of thumb.
    #[arg(long)]
    bandwidth_scale: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate a population total from a population frame and a sample.
    Estimate {
        /// CSV with columns id, x1, ..., xd.
        population: PathBuf,
        /// CSV with columns id, y.
        sample: PathBuf,
        /// Comma-separated covariate columns (default: all).
        #[arg(long, value_delimiter = ',')]
        vars: Option<Vec<String>>,
        /// ht, lreg, ls or sbll.
        #[arg(long, default_value = "sbll")]
        estimator: String,
        /// Write per-unit weights to this CSV.
        #[arg(long)]
        weights_out: Option<PathBuf>,
        /// Write the run manifest here.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Recorded in the manifest; estimation itself is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Choose covariates by BIC, then estimate with the chosen set.
    Select {
        population: PathBuf,
        sample: PathBuf,
        /// forward or backward.
        #[arg(long, default_value = "forward")]
        method: String,
        /// Comma-separated candidate columns (default: all).
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<String>>,
        /// Recompute the knot count for each subset from its own size.
        #[arg(long)]
        per_subset_knots: bool,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Monte Carlo study on the built-in additive models.
    Simulate {
        /// Model ids 1-4, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        model: Vec<u32>,
        /// Sample sizes, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "100")]
        n: Vec<usize>,
        /// Noise levels, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "0.1")]
        sigma0: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        population_size: usize,
        /// Estimators to run, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "ht,lreg,ls,sbll")]
        estimators: Vec<String>,
        /// active (the model's true covariates) or all.
        #[arg(long, default_value = "active")]
        covariates: String,
        /// estimation or selection.
        #[arg(long, default_value = "estimation")]
        experiment: String,
        /// Search methods for the selection experiment, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "forward,backward")]
        method: Vec<String>,
        #[arg(long)]
        per_subset_knots: bool,
        /// Record mean SBLL fit time (makes the CSV run-dependent).
        #[arg(long)]
        time_fits: bool,
        #[arg(long, default_value = "sbll-out")]
        out_dir: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Time SBLL fits on a synthetic population.
    Bench {
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        population_size: usize,
        #[arg(long, default_value_t = 25)]
        fits: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        tuning: Tuning,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let threads = rayon::current_num_threads();
    match cli.command {
        Command::Estimate { population, sample, vars, estimator, weights_out, manifest, seed, tuning } => {
            commands::estimate(commands::EstimateArgs {
                population,
                sample,
                vars,
                estimator,
                weights_out,
                manifest,
                seed,
                tuning,
                threads,
            })
        }
        Command::Select { population, sample, method, candidates, per_subset_knots, manifest, seed, tuning } => {
            commands::select(commands::SelectArgs {
                population,
                sample,
                method,
                candidates,
                per_subset_knots,
                manifest,
                seed,
                tuning,
                threads,
            })
        }
        Command::Simulate {
            model,
            n,
            sigma0,
            reps,
            seed,
            population_size,
            estimators,
            covariates,
            experiment,
            method,
            per_subset_knots,
            time_fits,
            out_dir,
            tuning,
        } => commands::simulate(commands::SimulateArgs {
            models: model,
            sizes: n,
            sigmas: sigma0,
            reps,
            seed,
            population_size,
            estimators,
            covariates,
            experiment,
            methods: method,
            per_subset_knots,
            time_fits,
            out_dir,
            tuning,
            threads,
        }),
        Command::Bench { d, n, population_size, fits, seed, tuning } => commands::bench(d, n, population_size, fits, seed, &tuning),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sbll: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
