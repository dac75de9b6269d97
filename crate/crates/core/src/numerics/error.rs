use thiserror::Error;

/// Errors raised by tensor construction and the differentiable operations.
#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("{op}: dimension mismatch between shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("non-finite value produced by {context}")]
    NonFinite { context: String },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("adam: parameter {index} has shape {param:?} but gradient/moment shape {other:?}")]
    AdamShapeMismatch {
        index: usize,
        param: Vec<usize>,
        other: Vec<usize>,
    },
}

impl NumericsError {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        NumericsError::InvalidArgument { op, msg: msg.into() }
    }
}
