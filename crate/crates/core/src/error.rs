//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("operator is not Hermitian (max deviation {max_deviation:.3e}, tolerance {tolerance:.3e})")]
    NotHermitian { max_deviation: f64, tolerance: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear algebra backend failure: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    #[error("backend tolerance not met: achieved error estimate {achieved:.3e} exceeds {required:.3e}")]
    ToleranceNotMet { achieved: f64, required: f64 },

    #[error("all singular values fell below the cutoff; no modes retained")]
    EmptyRetainedSet,

    #[error("rank-deficient pencil solve: {0}")]
    RankDeficientPencil(String),

    #[error("ill-conditioned Vandermonde system (condition estimate {condition:.3e} > 1e12)")]
    IllConditionedVandermonde { condition: f64 },

    #[error("mode list is empty")]
    EmptyModeList,

    #[error("infeasible sample-complexity target: {0}")]
    InfeasibleTarget(String),

    #[error("insufficient eligible pairs: requested {requested}, only {available} available")]
    InsufficientPairs { requested: usize, available: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("estimation failed for {label}: {source}")]
    Constituent {
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn for_constituent(label: &str, source: Error) -> Self {
        Error::Constituent {
            label: label.to_string(),
            source: Box::new(source),
        }
    }
}
