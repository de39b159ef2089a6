use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The source of a Neumann Poisson problem does not integrate to zero.
    #[error("Poisson source has non-zero mean {mean:e} (max |f| = {scale:e})")]
    NonZeroMean { mean: f64, scale: f64 },

    #[error("singular solve: {0}")]
    SingularSolve(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward called before forward")]
    NotEvaluated,

    #[error("inner optimizer did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("explicit reference solver became unstable (max |u| = {0:e})")]
    Unstable(f64),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("covariance factorization failed even with jitter {0:e}")]
    Factorization(f64),

    #[error("zero variance in reference data")]
    ZeroVariance,

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
