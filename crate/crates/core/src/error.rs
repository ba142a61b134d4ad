use std::io;

use thiserror::Error;

pub type Result<T, E = M3Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum M3Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("channel `{channel}` has {found} entries, expected {expected}")]
    LengthMismatch {
        channel: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in `{field}` at record {index}")]
    NonFinite { field: String, index: usize },

    #[error("malformed record {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },

    #[error("invalid geometric weights: {0}")]
    InvalidWeights(String),

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("position {position:?} lies outside the bounding cube")]
    OutOfDomain { position: [f64; 3] },

    #[error("lattice coordinate {value} does not fit in {bits} bits")]
    CoordinateOverflow { value: u32, bits: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{0}")]
    Undefined(String),

    #[error("unknown synthetic spec: {0}")]
    UnknownSpec(String),

    #[error("time limit of {limit_s} s exceeded")]
    Timeout { limit_s: f64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl M3Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        M3Error::Config(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        M3Error::Precondition(msg.into())
    }
}
