use std::path::PathBuf;

/// Crate-wide error type. The CLI maps these onto exit codes, so the
/// variants mirror failure classes rather than call sites: bad inputs or
/// configuration, numeric divergence during training, and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on data or configuration was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A file had the right location but the wrong contents.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Training produced non-finite values and was aborted.
    #[error("diverged: {0}")]
    Divergence(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
