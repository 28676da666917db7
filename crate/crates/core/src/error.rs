use thiserror::Error;

use crate::tabular::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(ValidationReport),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("soft value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("linear system is singular or ill-posed")]
    SingularSystem,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("density ratio is infinite: mu({state}) = 0 while d({state}) > 0")]
    InfiniteRatio { state: usize },

    #[error("snapshot chain has {len} entries, context {k} needs at least {k}")]
    ChainTooShort { len: usize, k: usize },

    #[error("curriculum already finished at context {0}")]
    CurriculumFinished(usize),

    #[error("ragged batch: trajectory {index} has length {len}, expected {expected}")]
    RaggedBatch {
        index: usize,
        len: usize,
        expected: usize,
    },

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
