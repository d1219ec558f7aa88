use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Parse,
    Invariant,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("cycle in state {state} graph through variables {nodes:?}")]
    Cycle { state: usize, nodes: Vec<usize> },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("state {0} received no posterior mass")]
    StateStarvation(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "log-likelihood decreased at iteration {iteration}: {previous} -> {current} (per datum)"
    )]
    NonMonotone {
        iteration: usize,
        previous: f64,
        current: f64,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse(_) | Error::Json(_) | Error::Csv(_) | Error::Io(_) => ErrorKind::Parse,
            Error::Numerical(_) | Error::NonMonotone { .. } | Error::StateStarvation(_) => {
                ErrorKind::Numerical
            }
            _ => ErrorKind::Invariant,
        }
    }
}
