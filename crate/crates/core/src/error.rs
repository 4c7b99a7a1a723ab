//! Error type shared by all library modules.

use thiserror::Error;

/// Errors produced by snapshot handling, inference, and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("value {value} out of bounds: {context}")]
    Bounds { context: String, value: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("regularized normal matrix is numerically singular (estimated condition number {condition:.3e})")]
    Conditioning { condition: f64 },

    #[error("stencil geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("inference failed for row {row}: {source}")]
    RowFailure {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("undefined normalization: {0}")]
    UndefinedNormalization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
