use thiserror::Error;

/// Errors produced by the estimation engine.
#[derive(Debug, Error)]
pub enum MfbvarError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("aggregation requires at least 5 lags (triangular weights span 5 months), got p={0}")]
    LagOrderTooSmall(usize),

    #[error("compact form undefined: model has no quarterly variables")]
    NoQuarterlyVariables,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("filter innovation variance singular at period {period}, element {element}")]
    SingularInnovation { period: usize, element: usize },

    #[error("Cholesky factorization failed: {0}")]
    Cholesky(String),

    #[error("MCMC block '{block}' failed at iteration {iteration}: {source}")]
    Block {
        block: &'static str,
        iteration: usize,
        #[source]
        source: Box<MfbvarError>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("corrupt or unsupported file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, MfbvarError>;
