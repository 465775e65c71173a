use alloc::string::String;

/// Errors raised anywhere in the model pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not agree with what the operation requires.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An operation produced NaN or an infinity.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// A documented precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Training hit a non-finite loss.
    #[error("loss diverged at epoch {epoch}, batch {batch}: {cause}")]
    Diverged {
        epoch: usize,
        batch: usize,
        cause: String,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
