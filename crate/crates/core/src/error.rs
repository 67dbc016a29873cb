use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: normalized axis is empty")]
    EmptyAxis { op: &'static str },

    #[error("{op}: non-finite value encountered")]
    Numeric { op: &'static str },

    #[error("{op}: index {index} out of range for length {len}")]
    Index { op: &'static str, index: usize, len: usize },

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("sequence too long: {len} exceeds limit {limit}")]
    Length { len: usize, limit: usize },

    #[error("token protocol violation: {0}")]
    Protocol(String),

    #[error("rollout produced no linguistic hidden states")]
    DegenerateRollout,

    #[error("cannot pool an empty sequence")]
    EmptySequence,

    #[error("rank error: requested {requested} dimensions but at most {max} are available")]
    Rank { requested: usize, max: usize },

    #[error("ill-conditioned scatter matrix: {0}")]
    Conditioning(String),

    #[error("cannot normalize a zero vector")]
    ZeroNorm,

    #[error("{name} = {value} is outside [0, 1]")]
    Range { name: &'static str, value: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("loss function is not deterministic: {first} != {second}")]
    Determinism { first: f64, second: f64 },

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
