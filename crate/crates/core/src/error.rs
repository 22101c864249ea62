use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, VolrigError>;

#[derive(Debug, Error)]
pub enum VolrigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("mesh has no triangles")]
    EmptyMesh,

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward called on a graph that was already consumed")]
    GraphConsumed,

    #[error("missing gradient for parameter {0}")]
    MissingGradient(String),

    #[error("invalid skeleton: {0}")]
    Skeleton(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("no joints above threshold {0}")]
    NoJoints(f64),

    #[error("{0}")]
    Invalid(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl VolrigError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VolrigError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by a missing input file.
    pub fn is_not_found(&self) -> bool {
        matches!(self, VolrigError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}
