use thiserror::Error;

/// Errors produced by the p-view engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("row {row}: unknown category {value:?} for attribute {attribute:?}")]
    UnknownCategory {
        row: usize,
        attribute: String,
        value: String,
    },

    #[error("row {row}: value {value:?} for numeric attribute {attribute:?} is not a number")]
    NotNumeric {
        row: usize,
        attribute: String,
        value: String,
    },

    #[error("row {row}: value {value} for attribute {attribute:?} lies outside [{min}, {max}]")]
    OutOfRange {
        row: usize,
        attribute: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("input is missing column {0:?}")]
    MissingColumn(String),

    #[error("invalid split of axis {axis} at {position}: allowed positions are [{start}, {end})")]
    InvalidSplit {
        axis: usize,
        position: u32,
        start: u32,
        end: u32,
    },

    #[error("invalid range for attribute {attribute:?}: {reason}")]
    InvalidRange { attribute: String, reason: String },

    #[error("empty range for attribute {attribute:?}: lower bound {lo} exceeds upper bound {hi}")]
    ReversedRange {
        attribute: String,
        lo: String,
        hi: String,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("exponential mechanism needs at least one candidate")]
    NoCandidates,

    #[error("quality score {index} is NaN")]
    NanQuality { index: usize },

    #[error("domain of {cells} cells exceeds the dense limit of {limit}")]
    DomainTooLarge { cells: String, limit: u64 },

    #[error("unsupported view format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("schema hash mismatch: header says {expected:016x}, schema hashes to {actual:016x}")]
    SchemaHashMismatch { expected: u64, actual: u64 },

    #[error("malformed view: {0}")]
    Malformed(String),

    #[error("invalid experiment config: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
