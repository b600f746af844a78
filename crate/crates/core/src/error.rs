use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid simplex point: {0}")]
    InvalidSimplexPoint(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("enumeration budget exceeded: {words} words > {budget}")]
    BudgetExceeded { words: f64, budget: f64 },

    #[error("calibration did not reach tolerance {tol:e}: residual {residual:e}")]
    CalibrationBudget { tol: f64, residual: f64 },

    #[error("sample budget of {paths} paths exhausted with {found} of {target} survivors")]
    InsufficientSurvivors { paths: u64, found: usize, target: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
