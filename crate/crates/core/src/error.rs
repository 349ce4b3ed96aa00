use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh generation failed: {0}")]
    MeshFailure(String),

    #[error("system has no interior degrees of freedom")]
    EmptySystem,

    #[error("matrix of size {size} exceeds the dense limit of {limit}")]
    SizeLimit { size: usize, limit: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    /// `subdomain` is `None` for the coarse operator.
    #[error("factorization failed ({})", match .subdomain { Some(i) => format!("subdomain {i}"), None => "coarse operator".to_string() })]
    FactorizationFailure { subdomain: Option<usize> },

    #[error("operation requires a two-level operator")]
    ModeError,

    #[error("Arnoldi breakdown at step {step} with residual {residual:e}")]
    NumericalBreakdown { step: usize, residual: f64 },

    #[error("non-finite value in loss at power step {k}")]
    NumericalOverflow { k: usize },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("training aborted: {0}")]
    AbortTraining(String),

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
