use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid bin partition: {0}")]
    InvalidBins(String),
    #[error("measure is not a martingale (max residual {0:.3e})")]
    NotMartingale(f64),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("right-hand side has nonzero mean {0:.3e}")]
    NonZeroMean(f64),
    #[error("linear program infeasible: {0}")]
    Infeasible(String),
    #[error("linear program unbounded")]
    Unbounded,
    #[error("marginal support mismatch: {0}")]
    UnmatchedSupport(String),
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("iteration did not converge: {0}")]
    Divergence(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
