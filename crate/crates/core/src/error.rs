use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("bad binary format: {0}")]
    Format(String),

    #[error("could not place {placed} of {requested} objects after {attempts} attempts")]
    Placement {
        placed: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("loss became non-finite at step {step}")]
    NonFinite { step: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
