use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },
    /// An argument is outside its valid domain.
    #[error("invalid input: {0}")]
    Input(String),
    /// The object is in a state that does not permit the operation.
    #[error("invalid state: {0}")]
    State(String),
    /// A configuration is inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// The operation is not supported for this configuration.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
