use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("{name} = {value} is outside {expected}")]
    OutOfRange { name: &'static str, value: f64, expected: &'static str },

    #[error("degenerate filter {filter}: magnitude {norm:e} is too small for a defined direction")]
    DegenerateFilter { filter: usize, norm: f64 },

    #[error("label {label} at index {index} is not below {classes}")]
    InvalidLabel { index: usize, label: usize, classes: usize },

    #[error("record data has {actual} bytes, expected a multiple of {record_len} (trailing {trailing} bytes at offset {offset})")]
    TruncatedRecords { actual: usize, record_len: usize, offset: usize, trailing: usize },

    #[error("unknown architecture {name:?}; valid names: {valid}")]
    UnknownArchitecture { name: String, valid: &'static str },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch { op, left: left.to_vec(), right: right.to_vec() }
    }
}
