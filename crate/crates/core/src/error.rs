use thiserror::Error;

#[derive(Debug, Error)]
pub enum DgError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),

    #[error("parameter violation: {0}")]
    Parameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("solver failure: {message} (last relative residual {:.3e})", residual_history.last().copied().unwrap_or(f64::NAN))]
    SolverFailure {
        message: String,
        residual_history: Vec<f64>,
    },

    #[error("refusing dense computation on {dofs} DOFs (limit {limit})")]
    TooLarge { dofs: usize, limit: usize },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DgError>;
