//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A line of an input stream could not be parsed.
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    /// An input token is not part of the configured label vocabulary.
    #[error("unknown label '{token}' at line {line}")]
    UnknownLabel { token: String, line: usize },

    /// The input stream held no events.
    #[error("empty input: no events parsed")]
    EmptyInput,

    /// An event timestamp falls outside the configured observation span.
    #[error("timestamp {timestamp} at line {line} outside observation span [{span_start}, {span_end}]")]
    TimestampOutOfSpan {
        timestamp: i64,
        line: usize,
        span_start: i64,
        span_end: i64,
    },

    /// A caller-supplied argument violates an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A model failed validation (non-stochastic rows, bad dimensions).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// Decoding hit a step where every state has zero probability.
    #[error("impossible observation sequence: zero path probability at step {step}")]
    ImpossiblePath { step: usize },

    /// Automatic type naming could not produce a unique label per cluster.
    #[error("type naming failed: {0}; supply manual overrides")]
    TypeNaming(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// CSV encoding or decoding failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// JSON encoding or decoding failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
