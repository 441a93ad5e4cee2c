use thiserror::Error;

/// Errors produced by lumpkit operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid alpha weights: {0}")]
    InvalidAlpha(String),

    #[error("chain is reducible: {0}")]
    Reducible(String),

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("operation only defined for {0}")]
    UnsupportedKind(String),

    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("linear program infeasible: {0}")]
    Infeasible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
