use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is singular (pivot {pivot} below threshold)")]
    Singular { pivot: usize },

    #[error("weight matrix of layer {layer} is singular")]
    SingularLayer { layer: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("newton inversion did not converge for y = {y} (residual {residual:e})")]
    NoConvergence { y: f64, residual: f64 },

    #[error("explicit jacobian bound exceeded: dimension {dim} > {bound}")]
    OracleBound { dim: usize, bound: usize },

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("column {col} has zero variance")]
    ZeroVariance { col: usize },

    #[error("bad model file: {0}")]
    Format(String),

    #[error("training aborted: {reason}")]
    TrainingAborted {
        reason: String,
        last_good: Box<crate::model::Network>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    IoPlain(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
