use thiserror::Error;

use crate::tokens::Modality;

/// Errors produced by the spike toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quantization spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite input at index {index}: {value}")]
    NonFinite { index: usize, value: f64 },

    #[error("value {value} at index {index} outside integer range [{lo}, {hi}]")]
    OutOfRange {
        index: usize,
        value: i64,
        lo: i64,
        hi: i64,
    },

    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("allocation has no timestep for layer {layer}, modality {modality}")]
    MissingAllocation { layer: usize, modality: Modality },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
