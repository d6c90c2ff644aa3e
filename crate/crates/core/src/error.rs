use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum VfpError {
    #[error("need at least {needed} ensemble members, got {got}")]
    TooFewMembers { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "covariance from {n_ens} members in {n_state} dimensions is rank deficient \
         and no shrinkage, localization or jitter is enabled"
    )]
    RankDeficient { n_state: usize, n_ens: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("step size {step:e} fell below the minimum {min:e} at t = {t}")]
    StepSizeUnderflow { step: f64, min: f64, t: f64 },

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("argument {value:e} is inside the singular regime of {what}")]
    Singular { what: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),
}

pub type Result<T> = std::result::Result<T, VfpError>;
