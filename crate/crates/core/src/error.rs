use thiserror::Error;

/// Errors raised by the flow, network and data modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite {what} at particle {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("sinkhorn did not converge in {iterations} iterations (marginal violation {violation:e})")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("exact W2 enumeration refused for {count} particles (limit {limit})")]
    TooLarge { count: usize, limit: usize },

    #[error("forward cache does not belong to these parameters")]
    StaleCache,

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FlowError {
    fn from(e: std::io::Error) -> Self {
        FlowError::Io(e.to_string())
    }
}

pub type Result<T, E = FlowError> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(FlowError::DimensionMismatch { expected, got })
    }
}
