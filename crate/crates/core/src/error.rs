use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SbllError {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("population frame has no response column")]
    MissingResponse,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Too few sampled units for the requested basis dimension.
    #[error("sample size {n} is smaller than the spline basis dimension {basis_dim}; reduce the number of covariates or the knot constant")]
    BasisTooLarge { n: usize, basis_dim: usize },

    #[error("population of size {size} exceeds the cap of {cap} for the general double-sum; use an SRS design for the closed form")]
    TooLarge { size: usize, cap: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SbllError>;
