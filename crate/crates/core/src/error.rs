use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the laboratory pipeline.
///
/// The variants are grouped so the command-line driver can map them onto
/// its exit codes: configuration problems, numerical validation failures
/// and I/O failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("numerical validation failed: {0}")]
    Numerical(String),

    #[error("degenerate state: {0}")]
    Degenerate(String),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Prefixes the message with the pipeline stage that failed, keeping the
    /// variant (and so the exit code).
    pub fn in_stage(self, stage: &str) -> Self {
        let tag = |m: String| format!("[{stage}] {m}");
        match self {
            Error::Domain(m) => Error::Domain(tag(m)),
            Error::Config { path, message } => Error::Config { path, message: tag(message) },
            Error::Numerical(m) => Error::Numerical(tag(m)),
            Error::Degenerate(m) => Error::Degenerate(tag(m)),
            Error::Resource(m) => Error::Resource(tag(m)),
            Error::Precondition(m) => Error::Precondition(tag(m)),
            Error::NotConverged(m) => Error::NotConverged(tag(m)),
            Error::Format { path, message } => Error::Format { path, message: tag(message) },
            io @ Error::Io { .. } => io,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Domain(_) => 2,
            Error::Precondition(_)
            | Error::Numerical(_)
            | Error::Degenerate(_)
            | Error::NotConverged(_)
            | Error::Resource(_) => 3,
            Error::Io { .. } | Error::Format { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn require_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {value}")))
    }
}
