use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {op} cannot combine shapes {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("contract error: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("validation error at line {line}: {msg}")]
    Validation { line: usize, msg: String },
    #[error("metric error: {0}")]
    Metric(String),
    #[error("numeric failure: non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("matrix cell {cell} failed: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Scenario(_) | Error::Checkpoint(_) => 2,
            Error::Data(_)
            | Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Metric(_)
            | Error::Io { .. } => 3,
            Error::NonFiniteLoss { .. } => 4,
            Error::Dimension { .. } | Error::Contract(_) => 2,
            Error::Cell { source, .. } => source.exit_code(),
        }
    }
}
