//! Command-line front end: loads run configurations, drives the solver and
//! writes plot-ready CSV files plus a plain-text summary per run.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{run_command, Status};
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Solver(submfg::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<submfg::Error> for CliError {
    fn from(e: submfg::Error) -> Self {
        use submfg::Error as E;
        match e {
            E::InvalidGrid(_)
            | E::InvalidMeasure(_)
            | E::InvalidModel(_)
            | E::EnvelopeConstant { .. }
            | E::Cfl { .. }
            | E::UnsupportedCommonNoise(_)
            | E::GridMismatch => CliError::Config(e.to_string()),
            other => CliError::Solver(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(submfg::Error::MonotonicityViolated { .. }) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "submfg", version, about = "Minimal and maximal equilibria of submodular mean field games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Solve,
    Verify,
    LqCheck,
    CommonNoise,
    Sweep,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn the minimal and maximal equilibria.
    Solve(RunArgs),
    /// Run the structural checks and the dynamic-programming oracle.
    Verify(RunArgs),
    /// Compare against the Riccati reference solution.
    LqCheck(RunArgs),
    /// Learn conditional equilibria under a common noise.
    CommonNoise(RunArgs),
    /// Re-solve on a sequence of refined grids.
    Sweep(RunArgs),
}

impl Command {
    pub fn split(self) -> (CommandKind, RunArgs) {
        match self {
            Command::Solve(a) => (CommandKind::Solve, a),
            Command::Verify(a) => (CommandKind::Verify, a),
            Command::LqCheck(a) => (CommandKind::LqCheck, a),
            Command::CommonNoise(a) => (CommandKind::CommonNoise, a),
            Command::Sweep(a) => (CommandKind::Sweep, a),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Configuration file; repeat to run several configurations.
    #[arg(long = "config", required = true)]
    pub configs: Vec<PathBuf>,
    /// Output directory (a subdirectory per configuration when several are given).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the learning tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Override the iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Worker threads; independent configurations run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Parses arguments, runs and maps the outcome to a process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (kind, args) = cli.command.split();
    run_command(kind, &args)
}
