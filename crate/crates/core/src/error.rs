use thiserror::Error;

/// Errors raised by the sampling, filtering and adaptation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate proposal: {0}")]
    DegenerateProposal(String),

    #[error("particle death at step {step}: all first-stage weights vanished")]
    ParticleDeath { step: usize },

    #[error("cross-entropy iterations degenerated at inner iteration {iteration}")]
    CeDegeneracy { iteration: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("numerical integration did not converge (achieved error {achieved:e}, requested {requested:e})")]
    Integration { achieved: f64, requested: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv: {0}")]
    Csv(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
