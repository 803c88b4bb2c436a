//! Experiment driver: configuration, the subcommands and their output files.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use dhe_core::approx::ApproxError;
use dhe_core::data::DataError;
use dhe_core::engine::EngineError;
use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("writing {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    /// 2 for anything the user can fix in the configuration, 3 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Engine(e) if e.is_config() => 2,
            CliError::Approx(ApproxError::Degree(_) | ApproxError::Interval | ApproxError::TooFewSamples { .. }) => 2,
            _ => 3,
        }
    }
}
