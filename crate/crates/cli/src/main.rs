//! `dvss`: run experiments and print theory reports.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dvss::ExperimentError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("divergence: {0}")]
    Divergence(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dvss", version, about = "Distributed variable sample-size gradient tracking experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct GlobalOpts {
    /// Run config (TOML, or JSON by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for replications (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Replication seed base.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub graph_seed: Option<u64>,
    #[arg(long, global = true)]
    pub problem_seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the theory report as JSON.
    Analyze {
        /// Accuracy targets for complexity predictions.
        #[arg(long = "epsilon")]
        epsilons: Vec<f64>,
    },
    /// One trajectory (replications forced to 1).
    Run,
    /// Monte Carlo ensemble over the configured replications.
    Mc,
    /// First-passage complexity table for the configured targets.
    Sweep,
    /// Merge several runs on a shared problem and graph.
    Compare {
        /// Configs to merge; `--config`, when given, comes first.
        configs: Vec<PathBuf>,
    },
    /// Write a random graph process as JSON.
    GenerateGraphs {
        #[arg(long, default_value_t = dvss::experiment::DESK_AGENTS)]
        n: usize,
        #[arg(long, default_value_t = dvss::experiment::DESK_EDGE_PROBABILITY)]
        p: f64,
        #[arg(long, default_value_t = dvss::experiment::DESK_GRAPHS)]
        count: usize,
    },
    /// Write a regression instance as JSON.
    GenerateProblem {
        #[arg(long, default_value_t = dvss::experiment::DESK_AGENTS)]
        n: usize,
        #[arg(long, default_value_t = dvss::experiment::DESK_DIM)]
        d: usize,
        #[arg(long, default_value_t = dvss::experiment::DESK_EIG_LO)]
        eig_lo: f64,
        #[arg(long, default_value_t = dvss::experiment::DESK_EIG_HI)]
        eig_hi: f64,
        #[arg(long, default_value_t = 0)]
        zeros: usize,
        #[arg(long, default_value_t = dvss::experiment::DESK_NOISE_SD)]
        noise_sd: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("dvss: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dvss: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
