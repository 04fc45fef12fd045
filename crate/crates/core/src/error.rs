use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("truncation interval ({lo}, {hi}) carries negligible mass {mass:e}")]
    DegenerateTruncation { lo: f64, hi: f64, mass: f64 },

    #[error("invalid neighbor graph: {0}")]
    InvalidGraph(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("non-stationary weight matrix: {0}")]
    NonStationary(String),

    #[error("{0} is not part of this model")]
    Usage(String),

    #[error("numeric failure in {factor}: {detail}")]
    Numeric { factor: String, detail: String },

    #[error("non-finite state at iteration {iteration}: {variable}")]
    NonFiniteState { iteration: usize, variable: String },

    #[error("invalid prediction request: {0}")]
    Request(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::ParameterDomain(msg.into())
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 4,
            Error::Numeric { .. } | Error::NonFiniteState { .. } | Error::DegenerateTruncation { .. } => 3,
            _ => 2,
        }
    }
}
