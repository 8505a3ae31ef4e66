//! Library core of the `trajektor` command line tool: configuration, the
//! staged pipeline, and the run manifest. The binary in `main.rs` is a thin
//! argument-parsing shell over this crate so integration tests can drive the
//! pipeline directly.

pub mod config;
pub mod manifest;
pub mod pipeline;

use thiserror::Error;

/// CLI-level failures, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments (exit code 2).
    #[error("validation error: {0}")]
    Validation(String),

    /// A pipeline stage failed (exit code 3).
    #[error("stage failure: {0}")]
    Stage(String),

    /// Filesystem problem (exit code 3).
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Stage(_) | CliError::Io(_) => 3,
        }
    }
}
