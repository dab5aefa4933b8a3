//! Batch front end: simulate panels, estimate the model, complete missing
//! entries, benchmark against the SVT baselines, and tune penalties.
//!
//! Exit codes: 0 on success, 1 on usage/configuration/input errors, 2 on
//! numeric estimation failures. Set `MNAR_LOG=info` (or `debug`) for
//! progress logging.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context_;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "mnar", version, about = "Network autoregression for incomplete matrix panels")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = automatic; overrides the config).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel, networks, covariates, and ground truth.
    Simulate,
    /// Fit the two-step estimator with bias correction on input files.
    Estimate,
    /// Reconstruct all entries of a panel from a previous fit.
    Complete,
    /// Run the Monte-Carlo benchmark over a grid of cells.
    Benchmark,
    /// Cross-validate the penalty grid on input files.
    Cv,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let threads = cli.threads.or(config.threads).unwrap_or(0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)
        .map_err(|e| anyhow::anyhow!("cannot create output dir {}: {e}", out.display()))?;
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let ctx = Context_ { config, seed, out };
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&ctx),
        Command::Estimate => commands::cmd_estimate(&ctx),
        Command::Complete => commands::cmd_complete(&ctx),
        Command::Benchmark => commands::cmd_benchmark(&ctx),
        Command::Cv => commands::cmd_cv(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("MNAR_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap prints help/version through the error path with success
            if err.use_stderr() {
                eprintln!("{err}");
                return ExitCode::from(1);
            }
            print!("{err}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let numeric = err.downcast_ref::<mnar_core::Error>().is_some();
            ExitCode::from(if numeric { 2 } else { 1 })
        }
    }
}
