use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unsupported operator: {0}")]
    Unsupported(String),

    #[error("zero norm after projection: {0}")]
    ZeroNorm(String),

    #[error("not normalised: integral = {0}")]
    NotNormalised(f64),

    #[error("frame mismatch: {0}")]
    FrameMismatch(String),

    #[error("orbitals are not orthonormal (max Gram deviation {0:.3e})")]
    NotOrthonormal(f64),

    #[error("no convergence after {iterations} iterations (residuals {residuals:?})")]
    NoConvergence {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("density leaks out of the grid: {0}")]
    BoundaryLeak(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
