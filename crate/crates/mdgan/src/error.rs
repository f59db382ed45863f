//! Crate-wide error type and `Result` alias.

use thiserror::Error;

/// All failure modes surfaced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or batch had the wrong dimensions for the requested op.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A configuration value failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A NaN or infinity appeared where a finite number is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Underlying file or directory I/O failed.
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A config document could not be parsed.
    #[error("config parse error: {0}")]
    ConfigParse(String),

    /// A protocol rule was violated (bad pairing, wrong message kind, ...).
    #[error("protocol violation: {0}")]
    Protocol(String),

    /// Training aborted, annotated with where in the run it happened.
    #[error("training aborted at round {round}, batch {batch}, client {client}: {message}")]
    Training {
        round: usize,
        batch: usize,
        client: usize,
        message: String,
    },

    /// Log or metrics serialization failed.
    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    /// Shorthand for an I/O error tagged with the offending path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
