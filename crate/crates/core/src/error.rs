use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An argument outside its admissible range (e.g. a non-positive temperature).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The operation was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// Invalid configuration; `key` names the offending field.
    #[error("configuration error in `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// Audio could not be ingested.
    #[error("ingestion error for {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("lookup error: no record for id `{0}`")]
    Lookup(String),

    /// A condition that should be impossible was observed.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool: 1 config/usage, 2 data/IO, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_) | Error::Parameter(_) | Error::Usage(_) | Error::Config { .. } => 1,
            Error::Data(_) | Error::Ingestion { .. } | Error::Lookup(_) | Error::Io { .. } => 2,
            Error::Invariant(_) => 3,
        }
    }
}
