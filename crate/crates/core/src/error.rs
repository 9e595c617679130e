use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate out of range: lon={lon}, lat={lat}")]
    CoordinateOutOfRange { lon: f64, lat: f64 },

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("unknown activity type {0:?}")]
    UnknownActivityType(String),

    #[error("{path}: {malformed} of {total} rows malformed (limit 1%)")]
    TooManyMalformed {
        path: String,
        malformed: usize,
        total: usize,
    },

    #[error("station index is empty")]
    EmptyIndex,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("distribution is not normalized (sum = {0})")]
    NotNormalized(f64),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("no activity of type {0}")]
    NoActivity(String),

    #[error("too few users: need {needed}, have {have}")]
    TooFewUsers { needed: usize, have: usize },

    #[error("missing input file {0}")]
    MissingInput(PathBuf),

    #[error("config: {0}")]
    Config(String),

    #[error("validation failed: {0}")]
    ValidationFailed(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 2 for configuration and missing inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MissingInput(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
