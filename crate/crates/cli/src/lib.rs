//! `treeqn` command-line front end: training runs, evaluation, gradient
//! checks and tree inspection.

pub mod args;
pub mod commands;
pub mod config;
pub mod dump;

use thiserror::Error;
use treeqn_training::TrainError;

pub use args::{Cli, Command};
pub use commands::{run_dir_for, runs_root, RUNS_DIR_ENV};

/// Version string recorded in every run directory.
pub const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (",
    env!("TREEQN_GIT_HASH"),
    ")"
);

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing config key `{0}`")]
    MissingKey(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// 2 for configuration mistakes, 1 for everything that went wrong later.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_)
            | CliError::MissingKey(_)
            | CliError::Train(TrainError::Config(_)) => 2,
            _ => 1,
        }
    }
}

impl From<treeqn_autodiff::CheckpointError> for CliError {
    fn from(e: treeqn_autodiff::CheckpointError) -> Self {
        CliError::Train(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Train(e.into())
    }
}

/// Dispatch a parsed command line. Human-readable results go to `out`,
/// progress to stderr.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => commands::train(&a, out),
        Command::Eval(a) => commands::eval(&a, out),
        Command::Gradcheck(a) => commands::gradcheck(&a, out),
        Command::Inspect(a) => commands::inspect(&a, out),
    }
}
