use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter {0} has no gradient")]
    MissingGrad(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("index {index} out of range for {what} of size {size}")]
    OutOfRange { what: &'static str, index: usize, size: usize },
    #[error("context overflow: {needed} positions exceed max_len {max_len}")]
    ContextOverflow { needed: usize, max_len: usize },
    #[error("{0}")]
    Precondition(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

/// Finite and strictly positive.
pub(crate) fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}
