use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("group {group} has zero mass")]
    EmptyGroup { group: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("solver failed: {message}")]
    Solver {
        message: String,
        /// Text dump of the offending program, when one was built.
        dump: Option<String>,
    },

    #[error("duality check failed: {0}")]
    Duality(String),

    #[error("representation check failed: {0}")]
    Representation(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checksum mismatch or truncated payload")]
    Checksum,

    #[error("malformed file: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            actual,
        }
    }

    /// True for errors caused by user input rather than numerical failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::Solver { .. } | Error::Duality(_) | Error::Representation(_)
        )
    }
}
