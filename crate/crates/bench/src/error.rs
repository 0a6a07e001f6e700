use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Model(#[from] longimix_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Missing(String),
    #[error("{failed} of {total} model runs failed")]
    ModelFailures { failed: usize, total: usize },
}

impl BenchError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        BenchError::Io { path: path.display().to_string(), source }
    }

    /// Process exit status: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
