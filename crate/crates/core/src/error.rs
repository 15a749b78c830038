use thiserror::Error;

/// Errors raised by the estimators, the asymptotics engine and the simulation harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("quadrature failed to converge ({message}); last estimate {last_estimate:?}")]
    Quadrature {
        message: String,
        last_estimate: Vec<f64>,
    },

    #[error("divergent integral: {0}")]
    DivergentIntegral(String),

    #[error("solver failure: {message}; last iterate {last_iterate:?}")]
    Solver {
        message: String,
        last_iterate: Vec<f64>,
    },

    #[error("matrix {name} is singular")]
    SingularMatrix { name: String },

    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be finite")))
    }
}
