use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] adaptive_apf::Error),
    #[error("numerical failure: {0}")]
    RunFailed(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error at {path}: {message}")]
    Csv { path: PathBuf, message: String },
}

impl BenchError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Numerical(_) | BenchError::RunFailed(_) => 3,
            BenchError::Io { .. } | BenchError::Csv { .. } => 1,
        }
    }
}
