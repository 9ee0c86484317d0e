use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Mesh connectivity violates a structural invariant.
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("non-manifold edge ({0}, {1}) is shared by more than two faces")]
    NonManifoldEdge(usize, usize),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient in attribute `{0}`")]
    NonFiniteGradient(&'static str),

    #[error("non-finite loss at frame {frame}, iteration {iteration}")]
    NonFiniteLoss { frame: usize, iteration: usize },

    #[error("non-finite evaluation while differentiating component {0}")]
    NonFiniteEvaluation(usize),

    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("missing input: {}", .0.display())]
    MissingPath(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Validation failures map to CLI exit code 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MissingPath(_)
                | Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::Format { .. }
                | Error::Topology(_)
                | Error::NonManifoldEdge(..)
                | Error::ShapeMismatch(_)
                | Error::Json(_)
        )
    }
}
