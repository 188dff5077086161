use thiserror::Error;

/// Errors raised across the calculus, noise and harness layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("arity error: {0}")]
    Arity(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("basis error: {0}")]
    Basis(String),

    #[error("quadrature error: {0}")]
    Quadrature(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("positivity error: {0}")]
    Positivity(String),

    #[error("factorization error: {0}")]
    Factorization(String),

    #[error("estimator error: {0}")]
    Estimator(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("truncation error: {0}")]
    Truncation(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
