//! Command-line workflows.
//!
//! Every subcommand takes `--config`, `--seed`, `--threads` and `--out`.
//! `--config` accepts either a TOML run configuration or the
//! `manifest.json` of an earlier run; in the latter case the recorded
//! configuration, seed and input paths are reused, so the run is repeated
//! exactly. Flags given on the command line still take precedence.

pub mod commands;
pub mod config;
pub mod io;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::error::LgcpError;

pub use commands::Manifest;
pub use config::RunConfig;

/// Environment variable read for the worker count when `--threads` is absent.
pub const THREADS_ENV: &str = "LGCP_THREADS";

#[derive(Debug, Error)]
pub enum Cause {
    #[error(transparent)]
    Lgcp(#[from] LgcpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug)]
pub struct CliError {
    pub subcommand: &'static str,
    pub file: Option<PathBuf>,
    pub cause: Cause,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.subcommand)?;
        if let Some(file) = &self.file {
            write!(f, "{}: ", file.display())?;
        }
        write!(f, "{}", self.cause)
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.cause)
    }
}

#[derive(Debug, Parser)]
#[command(name = "lgcp", version, about = "Simulate and fit discretized log-Gaussian Cox processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration, or a manifest.json to repeat a run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (default 0, or the manifest's seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; overrides LGCP_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Override a configuration entry, e.g. --set hmc.iterations=200.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a latent field and point patterns from the truth model.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a pattern by Hamiltonian Monte Carlo.
    FitHmc {
        #[command(flatten)]
        common: Common,
        /// Point pattern CSV (x,y).
        #[arg(long)]
        pattern: Option<PathBuf>,
    },
    /// Fit a pattern by mean-field variational Bayes.
    FitVb {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pattern: Option<PathBuf>,
    },
    /// Minimum-contrast estimate of the correlation and sigma^2.
    Mincontrast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pattern: Option<PathBuf>,
    },
    /// Posterior predictive L-function check of a fit.
    Ppc {
        #[command(flatten)]
        common: Common,
        /// Output directory of fit-hmc or fit-vb.
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        pattern: Option<PathBuf>,
    },
    /// Replicate study: simulate, fit with each method, tabulate.
    Study {
        #[command(flatten)]
        common: Common,
    },
    /// Render a study table or fit summary as CSV and aligned text.
    Summarize {
        #[command(flatten)]
        common: Common,
        /// study.json, or a study / fit output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::FitHmc { .. } => "fit-hmc",
            Command::FitVb { .. } => "fit-vb",
            Command::Mincontrast { .. } => "mincontrast",
            Command::Ppc { .. } => "ppc",
            Command::Study { .. } => "study",
            Command::Summarize { .. } => "summarize",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Simulate { common }
            | Command::FitHmc { common, .. }
            | Command::FitVb { common, .. }
            | Command::Mincontrast { common, .. }
            | Command::Ppc { common, .. }
            | Command::Study { common }
            | Command::Summarize { common, .. } => common,
        }
    }

    /// Input files named on the command line, by role.
    fn inputs(&self) -> Vec<(&'static str, &Path)> {
        let mut v = Vec::new();
        match self {
            Command::FitHmc { pattern, .. } | Command::FitVb { pattern, .. } | Command::Mincontrast { pattern, .. } => {
                v.extend(pattern.as_deref().map(|p| ("pattern", p)));
            }
            Command::Ppc { bundle, pattern, .. } => {
                v.extend(bundle.as_deref().map(|p| ("bundle", p)));
                v.extend(pattern.as_deref().map(|p| ("pattern", p)));
            }
            Command::Summarize { input, .. } => v.extend(input.as_deref().map(|p| ("input", p))),
            Command::Simulate { .. } | Command::Study { .. } => {}
        }
        v
    }
}

/// Worker count: flag, then environment, then rayon's default.
pub fn thread_count(flag: Option<usize>) -> std::result::Result<Option<usize>, String> {
    if let Some(n) = flag {
        return if n == 0 { Err("--threads must be at least 1".into()) } else { Ok(Some(n)) };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{THREADS_ENV}={v:?} is not a positive integer")),
        },
        Err(_) => Ok(None),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let name = cli.command.name();
    let fail = |file: Option<PathBuf>, cause: Cause| CliError {
        subcommand: name,
        file,
        cause,
    };
    let common = cli.command.common();
    let threads = thread_count(common.threads).map_err(|m| fail(None, Cause::Usage(m)))?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| fail(None, Cause::Usage(e.to_string())))?
    };
    let inputs: Vec<(String, PathBuf)> = cli
        .command
        .inputs()
        .into_iter()
        .map(|(k, p)| (k.to_string(), p.to_path_buf()))
        .collect();
    let ctx = commands::Context::load(name, common, inputs).map_err(|e| fail(e.file, e.cause))?;
    pool.install(|| commands::dispatch(&ctx)).map_err(|e| fail(e.file, e.cause))
}

/// Parse arguments, run, print errors and map them to an exit code.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lgcp {e}");
            ExitCode::FAILURE
        }
    }
}
