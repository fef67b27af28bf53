use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("input too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("operation requires the {expected} paradigm")]
    ParadigmMismatch { expected: &'static str },

    #[error("backward called without a recorded forward pass")]
    BackwardWithoutForward,

    #[error("zero energy in {0}")]
    ZeroEnergy(&'static str),

    #[error("window normalizer vanishes at interior sample {0}")]
    ZeroNormalizer(usize),

    #[error("sampler did not accept a value within {0} proposals")]
    SamplerExhausted(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
