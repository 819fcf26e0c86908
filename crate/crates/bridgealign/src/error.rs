use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid time triple (s={s}, t={t}, e={e}): need 1 <= s < t < e")]
    InvalidTimes { s: usize, t: usize, e: usize },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("times must be strictly increasing")]
    NonIncreasingTimes,

    #[error("zero-norm vector where a direction is required")]
    ZeroNorm,

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("category bank infeasible: {attempts} rejection attempts exhausted")]
    BankInfeasible { attempts: usize },

    #[error("cost matrix must be square and finite")]
    BadCostMatrix,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("bad tensor file: {0}")]
    BadTensorFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 1 validation, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 2,
            Error::Io(_) | Error::BadTensorFile(_) => 3,
            _ => 1,
        }
    }
}
