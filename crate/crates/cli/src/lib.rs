//! Command implementations behind the `sipsim` binary.

pub mod commands;
pub mod config;

use thiserror::Error;

pub use commands::{dataset_stats, evaluate, report, simulate, sip_test};
pub use config::{RunConfig, RunManifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 2 config, 3 data, 4 systemic backend failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Backend(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}
