//! `ssm`: batch driver for spatial self-similarity analysis of patch-token
//! feature dumps.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod output;

use commands::{correlate, correlogram, metrics, synth, transform};

#[derive(Parser, Debug)]
#[command(
    name = "ssm",
    version,
    about = "Spatial self-similarity metrics for patch-token feature maps"
)]
pub struct Cli {
    /// Worker threads for per-image work (default: logical cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Base seed for SRSS sampling, weight initialisation and synthesis
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output file or directory, depending on the subcommand
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Evaluate structure metrics over a directory of feature grids
    Metrics(metrics::Args),
    /// Export the distance correlogram of one feature grid as CSV
    Correlogram(correlogram::Args),
    /// Apply a feature transform to a grid or a directory of grids
    Transform(transform::Args),
    /// Correlate per-encoder metric means against external scores
    Correlate(correlate::Args),
    /// Generate synthetic grids with planted spatial structure
    Synth(synth::Args),
}

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Globals {
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Globals {
    pub fn out(&self) -> Result<&PathBuf> {
        self.out
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("--out is required for this command"))
    }

    pub fn pool(&self) -> Result<rayon::ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.unwrap_or(0))
            .build()?)
    }
}

fn run(cli: Cli) -> Result<()> {
    let globals = Globals {
        jobs: cli.jobs,
        seed: cli.seed,
        out: cli.out,
    };
    if globals.jobs == Some(0) {
        anyhow::bail!("--jobs must be at least 1");
    }
    match cli.command {
        Command::Metrics(a) => metrics::run(&a, &globals),
        Command::Correlogram(a) => correlogram::run(&a, &globals),
        Command::Transform(a) => transform::run(&a, &globals),
        Command::Correlate(a) => correlate::run(&a, &globals),
        Command::Synth(a) => synth::run(&a, &globals),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SSM_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
