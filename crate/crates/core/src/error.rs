use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("query row {row} has no allowed keys")]
    MaskedOut { row: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stale cache: expected chunk {expected}, cache holds chunk {found}")]
    Cache { expected: usize, found: usize },

    #[error("invalid pose: {0}")]
    Pose(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("cannot stitch seam between chunk {prev} and chunk {cur}: {reason}")]
    Stitch {
        prev: usize,
        cur: usize,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("trajectory mismatch: {0}")]
    Alignment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Numerical failures map to a distinct process exit code in the CLI.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
