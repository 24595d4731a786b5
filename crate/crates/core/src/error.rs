use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MoeError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("negative noise level {0}")]
    NegativeNoise(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("nonlinearity is not valid at this noise level: {0}")]
    InvalidNonlinearity(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, MoeError>;
