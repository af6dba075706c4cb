//! Command implementations behind the `gridcast` binary.
//!
//! Each `cmd_*` function is a plain library call so the pipeline can be
//! driven from tests as well as from the command line.

use std::path::Path;

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod predictions;
pub mod render;

pub use commands::*;
pub use config::RunConfig;
pub use predictions::Predictions;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("spec mismatch: {0}")]
    Mismatch(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },
}

impl CliError {
    /// Process exit code: 2 config, 3 data, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) | CliError::Mismatch(_) | CliError::Data(_) => 3,
            CliError::Divergence { .. } => 4,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<gridcast::codec::CodecError> for CliError {
    fn from(e: gridcast::codec::CodecError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<gridcast::sim::SimError> for CliError {
    fn from(e: gridcast::sim::SimError) -> Self {
        match e {
            gridcast::sim::SimError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<gridcast::model::ModelError> for CliError {
    fn from(e: gridcast::model::ModelError) -> Self {
        use gridcast::model::ModelError;
        match e {
            ModelError::Divergence { step, loss } => CliError::Divergence { step, loss },
            ModelError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<gridcast::metrics::MetricsError> for CliError {
    fn from(e: gridcast::metrics::MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<gridcast::fusion::FusionError> for CliError {
    fn from(e: gridcast::fusion::FusionError) -> Self {
        match e {
            gridcast::fusion::FusionError::Priority(m) => CliError::Config(m),
            other => CliError::Mismatch(other.to_string()),
        }
    }
}
