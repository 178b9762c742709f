//! Crate-wide error type and exit-code mapping.
//!
//! Every fallible operation returns [`Result`]. Errors are grouped into the
//! categories the CLI maps onto process exit codes:
//!
//! | category       | exit code | meaning                                        |
//! |----------------|-----------|------------------------------------------------|
//! | success        | 0         | command completed                              |
//! | internal       | 1         | unexpected failure (bug, OS error at shutdown) |
//! | config         | 2         | invalid configuration or argument validation   |
//! | data           | 3         | unreadable/invalid dataset or shape mismatch   |
//! | authorization  | 4         | bad admin credential or missing/wrong key      |
//! | not found      | 5         | lookup target does not exist                   |

use std::path::PathBuf;
use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for all gazelab operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Filesystem-level failure while reading or writing `path`.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Invalid configuration: bad parameter values, unknown keys, violated
    /// preconditions of the "caller passed nonsense" kind.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid or insufficient data: malformed CSV, empty partitions,
    /// dimension mismatches, classes too small for the requested split.
    #[error("data error: {0}")]
    Data(String),

    /// Authorization failure: wrong admin credential, wrong or missing key.
    /// Deliberately carries no information about whether a queried dummy ID
    /// exists.
    #[error("authorization error: {0}")]
    Auth(String),

    /// Lookup target (dummy ID, epoch, file) does not exist.
    #[error("not found: {0}")]
    NotFound(String),
}

impl Error {
    /// Builds an [`Error::Io`] with path context.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code the CLI uses for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Auth(_) => 4,
            Error::NotFound(_) => 5,
        }
    }
}
