use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
///
/// Variants are grouped into families (see [`ErrorFamily`]) so that the
/// command-line front end can map them onto stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed input at byte offset {offset}: {reason}")]
    ParseAt { offset: u64, reason: String },

    #[error("parse error on row {row}: {reason}")]
    ParseRow { row: usize, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid band: {0}")]
    InvalidBand(String),

    #[error("degenerate bin: {0}")]
    DegenerateBin(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("degenerate wattage range: {0}")]
    DegenerateRange(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("incompatible model: {0}")]
    IncompatibleModel(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("internal error: {0}")]
    Internal(String),
}

/// Coarse grouping of [`Error`] variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Io,
    Parse,
    Input,
    Dimension,
    Training,
    Model,
    Internal,
}

impl ErrorFamily {
    /// Process exit code for this family. `2` is left to argument parsing.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorFamily::Io => 3,
            ErrorFamily::Parse => 4,
            ErrorFamily::Input => 5,
            ErrorFamily::Dimension => 6,
            ErrorFamily::Training => 7,
            ErrorFamily::Model => 8,
            ErrorFamily::Internal => 9,
        }
    }
}

impl Error {
    pub fn family(&self) -> ErrorFamily {
        match self {
            Error::Io { .. } => ErrorFamily::Io,
            Error::ParseAt { .. }
            | Error::ParseRow { .. }
            | Error::Parse(_)
            | Error::UnsupportedFormat(_) => ErrorFamily::Parse,
            Error::EmptyInput(_)
            | Error::Alignment(_)
            | Error::InvalidInput(_)
            | Error::InvalidBand(_)
            | Error::DegenerateBin(_)
            | Error::DegenerateRange(_)
            | Error::Stratification(_) => ErrorFamily::Input,
            Error::Dimension { .. } => ErrorFamily::Dimension,
            Error::Divergence { .. } => ErrorFamily::Training,
            Error::IncompatibleModel(_) => ErrorFamily::Model,
            Error::Internal(_) => ErrorFamily::Internal,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
