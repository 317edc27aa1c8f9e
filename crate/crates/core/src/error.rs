use thiserror::Error;

/// Errors raised anywhere in the fitting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    #[error("stacked derivative matrix F has rank {rank} < {p}")]
    Rank { rank: usize, p: usize },

    #[error("Fisher information is numerically singular")]
    SingularInformation,

    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("orthogonal parameter split violated: {0}")]
    Split(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
