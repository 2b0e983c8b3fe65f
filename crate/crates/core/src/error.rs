//! Error type shared across the crate.
//!
//! Numerical infeasibilities (non-positive-definite covariances, singular
//! structural matrices) are reported as typed errors rather than NaNs so that
//! optimizers can treat them as infeasible steps and retreat, and so that
//! callers can distinguish "model rejected the point" from genuine bugs.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("parameter vector has length {got}, model has {expected} free parameters")]
    LengthMismatch { got: usize, expected: usize },

    #[error("fixed-cell or shared-parameter value conflict at {0}")]
    ValueConflict(String),

    #[error("I - B is numerically singular (pivot magnitude below {threshold:e})")]
    SingularStructural { threshold: f64 },

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("numeric differentiation produced non-finite values")]
    NonFiniteDifference,

    #[error("information matrix is singular")]
    SingularInformation,

    #[error("sandwich variance has a non-positive diagonal entry (numerical breakdown)")]
    NegativeSandwichVariance,

    #[error("no admissible start value: the implied covariance is not positive definite at every candidate start")]
    StartValue,

    #[error("infeasible distribution: excess kurtosis {excess_kurtosis} below the bound skewness^2 - 2 = {bound}")]
    InfeasibleDistribution { excess_kurtosis: f64, bound: f64 },

    #[error("third-moment polynomial coefficient solve did not converge")]
    FleishmanNoConvergence,

    #[error("intermediate correlation matrix is not positive definite")]
    IntermediateCorrelationNotPd,

    #[error("dataset error: {0}")]
    Data(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("resampling failed: {0}")]
    Resampling(String),

    #[error("underdetermined problem: {0}")]
    Underdetermined(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
