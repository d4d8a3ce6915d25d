use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {message}")]
    InvalidShape { op: &'static str, message: String },

    #[error("data length {len} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        shape: Vec<usize>,
        len: usize,
        expected: usize,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tensor #{0} is not recorded on the loss tape")]
    NotOnTape(usize),

    #[error("operands belong to different tapes")]
    TapeMismatch,
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
