use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid file line {line}: {message}")]
    GridParse { line: usize, message: String },

    #[error("invalid grid: {0}")]
    GridInvalid(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid bids: {0}")]
    InvalidBids(String),

    #[error("infeasible scenario: power flow diverged at every tried iterate")]
    InfeasibleScenario,

    #[error("brute-force lattice too large: {0}")]
    LatticeTooLarge(String),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("backward called on a tape without a recorded forward pass")]
    EmptyTape,

    #[error("unknown {kind} `{name}`; valid names: {valid}")]
    UnknownName {
        kind: &'static str,
        name: String,
        valid: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("incomplete run directory {path}: {reason}")]
    IncompleteRun { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
