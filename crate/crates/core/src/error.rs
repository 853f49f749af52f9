use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("failed to parse config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("latency graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),

    #[error("edge probability {0} is outside [0, 1]")]
    EdgeProbability(f64),

    #[error("total active stake is zero")]
    ZeroTotalStake,

    #[error("empirical distribution file {0} contains no values")]
    EmptyEmpiricalFile(PathBuf),

    #[error("{file}: row {row}: {message}")]
    BadRow {
        file: PathBuf,
        row: usize,
        message: String,
    },

    #[error("no settled slots in run")]
    NoSettledSlots,

    #[error("all values are zero")]
    AllZero,

    #[error("negative value {0} where a non-negative amount is required")]
    NegativeValue(i64),

    #[error("unknown agent {0}")]
    UnknownAgent(usize),

    #[error("parameter `{name}` = {value} out of domain: {reason}")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
