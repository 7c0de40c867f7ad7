//! Experiment front end: `run` executes a declarative TOML config and writes
//! results.csv / config.lock / summary.json; `plotdata` reduces a results
//! file to per-round mean and standard-error curves; `selftest` runs quick
//! numeric identity suites.
//!
//! Exit codes: 0 success, 1 I/O or selftest failure, 2 configuration error
//! (the message names the offending key), 3 runtime numerical error (the
//! message names the seed, method, and round).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod plotdata;
mod runcmd;
mod selftest;

/// Errors partitioned by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable, unparseable, or invalid configuration input; exit 2.
    Config(String),
    /// A run failed mid-experiment; exit 3.
    Runtime(String),
    /// Output could not be written or read back; exit 1.
    Io(String),
    /// Selftest suites failed; exit 1.
    Failed(String),
}

impl CliError {
    fn report(&self) -> (&str, u8) {
        match self {
            CliError::Config(m) => (m, 2),
            CliError::Runtime(m) => (m, 3),
            CliError::Io(m) | CliError::Failed(m) => (m, 1),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "bregal",
    about = "Seeded active-learning experiments with weighted acquisition",
    long_about = None,
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (seed, method) pair of a TOML experiment config.
    ///
    /// Writes results.csv, config.lock, and summary.json into the config's
    /// output directory (override with BREGAL_OUTPUT_DIR).
    Run {
        /// Path to the experiment config file.
        config: PathBuf,
    },
    /// Collapse a results.csv into per-round mean/SEM rows for one metric.
    Plotdata {
        /// Path to a results.csv produced by `run`.
        results: PathBuf,
        /// Metric name to extract (e.g. sel, sel_w, nll, nll_w, linex).
        #[arg(long)]
        metric: String,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run quick numeric identity checks against the core library.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => runcmd::cmd_run(config),
        Command::Plotdata {
            results,
            metric,
            out,
        } => plotdata::cmd_plotdata(results, metric, out),
        Command::Selftest => selftest::cmd_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (message, code) = e.report();
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
