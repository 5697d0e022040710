use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("node set is empty")]
    EmptyNodeSet,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("graph has no nodes after preprocessing")]
    EmptyGraph,

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("instance has {entries} weight entries, above the cap of {cap}")]
    TooLarge { entries: usize, cap: usize },

    #[error("attack candidate pools exhausted after {done} of {budget} flips")]
    AttackExhausted { done: usize, budget: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
