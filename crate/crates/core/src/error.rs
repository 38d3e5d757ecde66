use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("estimator undefined: {0}")]
    Degenerate(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("neighborhood at {centroid} deg holds {tally} observations, need at least {needed}")]
    UnderPopulated {
        centroid: f64,
        tally: usize,
        needed: usize,
    },

    #[error("no admissible S_phi score for k >= {k_min}")]
    SelectionFailure { k_min: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
