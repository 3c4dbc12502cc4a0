use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violates a type invariant (inverted box, probability out of range, ...).
    #[error("invalid value: {0}")]
    Invalid(String),

    /// Inputs are individually valid but do not fit together (shape or length mismatch).
    #[error("domain error: {0}")]
    Domain(String),

    /// The computation has no meaningful answer for these inputs.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit code for this error class: 2 input, 3 invariant, 4 degenerate.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Json(_) | Error::Config(_) => 2,
            Error::Invalid(_) | Error::Domain(_) => 3,
            Error::Degenerate(_) | Error::Undefined(_) => 4,
        }
    }
}
