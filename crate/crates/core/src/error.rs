use thiserror::Error;

pub type Result<T, E = NioError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NioError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular point: map evaluated at x = 0")]
    SingularPoint,

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected} cells, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error(
        "power iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    Convergence { iterations: usize, residual: f64 },

    #[error("interval Newton: no root in [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },

    #[error("interval Newton failed: {0}")]
    NewtonFailure(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl NioError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        NioError::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
