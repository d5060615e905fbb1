use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid damping field: {0}")]
    Damping(String),

    #[error("inconsistent mesh/damping pairing: {0}")]
    Inconsistent(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix (zero pivot at row {row})")]
    Singular { row: usize },

    #[error("near-singular system: {0}")]
    NearSingular(String),

    #[error("non-finite state after step {step}")]
    NonFinite { step: usize },

    #[error("dense solve limited to {max} unknowns, got {n}")]
    TooLarge { n: usize, max: usize },

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("point outside the closed subdomain: {0}")]
    OutsideDomain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
