use std::path::PathBuf;

/// Errors produced by the segpoint library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument or configuration is malformed.
    #[error("validation error: {0}")]
    Validation(String),
    /// A value lies outside the domain of the operation (e.g. a nonpositive
    /// observation for an exponential-model statistic).
    #[error("domain error: {0}")]
    Domain(String),
    /// An index or split position lies outside its admissible range.
    #[error("range error: {0}")]
    Range(String),
    /// The series is too short for the requested operation.
    #[error("series too short: length {len}, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Self::Validation(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Self::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn range(msg: impl Into<String>) -> Self {
        Self::Range(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
