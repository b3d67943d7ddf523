use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("invalid model spec at layer {layer}: {reason}")]
    InvalidSpec { layer: usize, reason: String },
    #[error("label {label} at index {index} is outside [0, {classes})")]
    InvalidLabel {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("pixel {index} has value {value}, expected a value in [0, 1]")]
    PixelOutOfRange { index: usize, value: f64 },
    #[error("confidence {value} at index {index} is outside [0, 1]")]
    ConfidenceOutOfRange { index: usize, value: f64 },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("input dimension {dim} exceeds the dense-matrix cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("label vector is not one-hot")]
    NotOneHot,
    #[error("{0}")]
    Generation(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}
