use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The configuration document could not be parsed.
    #[error("config parse error: {0}")]
    ConfigParse(String),

    /// A named configuration invariant does not hold.
    #[error("{name}: {detail}")]
    Invariant { name: &'static str, detail: String },

    /// Inconsistent in-memory data (dimension mismatch, missing entry, key mismatch).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A binary container has the wrong magic, version or layout.
    #[error("format error: {0}")]
    Format(String),

    /// The deployment area cannot host the requested layout.
    #[error("sizing error: {0}")]
    Sizing(String),

    /// A dataset cannot be split or partitioned as requested.
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invariant(name: &'static str, detail: impl Into<String>) -> Self {
        Error::Invariant {
            name,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
