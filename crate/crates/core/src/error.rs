use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum CocnError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("node index {index} out of bounds for a graph with {n} nodes")]
    Bounds { index: usize, n: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("size error: {0}")]
    Size(String),

    #[error("observed degree {observed} exceeds max_degree {max}")]
    Capacity { observed: usize, max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CocnError>;

impl CocnError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CocnError::Io {
            path: path.into(),
            source,
        }
    }
}
