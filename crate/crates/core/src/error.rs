use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("line {line}, column `{column}`: {message}")]
    InvalidValue {
        line: usize,
        column: String,
        message: String,
    },

    #[error("subject {subject} has {found} rows, needs at least {needed}")]
    TooFewRows {
        subject: u32,
        needed: usize,
        found: usize,
    },

    #[error("column `{0}` has zero variance in the training rows")]
    ZeroVariance(String),

    #[error("unknown term `{0}`")]
    UnknownTerm(String),

    #[error("unknown subject {0}")]
    UnknownSubject(u32),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
