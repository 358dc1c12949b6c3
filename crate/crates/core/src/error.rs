use thiserror::Error;

/// Errors surfaced by the tensor engine, model assembly, data pipeline and
/// training loop.
#[derive(Debug, Error)]
pub enum SanetError {
    /// Tensor shapes are incompatible for the requested operation. The
    /// message always spells out the offending dimensions.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// A non-finite value showed up where the numerics require finite input
    /// (gradients before an optimizer step, the training loss, ...).
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training halted: {0}")]
    Training(String),
}

pub type Result<T> = std::result::Result<T, SanetError>;
