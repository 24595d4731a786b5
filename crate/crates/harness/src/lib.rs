//! Experiment presets, oracle verification suites and CSV output for the
//! `moe` command line.

pub mod config;
pub mod experiment;
pub mod io;
pub mod pool;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] moe_core::MoeError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub use config::{ExperimentConfig, Preset};
pub use experiment::{run_preset, ResultTable};
pub use verify::{run_verification, Report, Suite};
