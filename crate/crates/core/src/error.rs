use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("MissingColumn: {path} has no column named `{column}`")]
    MissingColumn { path: PathBuf, column: &'static str },

    #[error("NonFiniteValue: column `{column}` row {row} is not a finite number ({raw:?})")]
    NonFiniteValue { column: &'static str, row: usize, raw: String },

    #[error("SharpDesignViolation: row {row} has x = {x} and w = {w}, expected w = I(x >= {threshold})")]
    SharpDesignViolation { row: usize, x: f64, w: f64, threshold: f64 },

    #[error("EmptySample: {0}")]
    EmptySample(&'static str),

    #[error("ShapeMismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("SingularSystem: {0}")]
    SingularSystem(String),

    #[error("NoSolution: {0}")]
    NoSolution(String),

    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),

    #[error("InvalidModel: {0}")]
    InvalidModel(String),

    #[error("bootstrap replicate {index}: {source}")]
    Replicate { index: usize, source: Box<Error> },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularSystem(_) | Error::NoSolution(_) => true,
            Error::Replicate { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// True for failures reading or writing files.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => e.is_io_error(),
            Error::Replicate { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
