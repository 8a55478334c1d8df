use thiserror::Error;

/// Errors surfaced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation
    /// (t out of range, dimension mismatch, degenerate sigma).
    #[error("domain error: {0}")]
    Domain(String),

    /// A prompt label that the world does not know.
    #[error("unknown prompt label `{0}`")]
    UnknownLabel(String),

    /// A configuration violates an invariant or is missing required state.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called in an invalid runtime state.
    #[error("state error: {0}")]
    State(String),

    /// Non-finite parameters encountered during optimization.
    #[error("optimization diverged at step {step}: non-finite parameters")]
    Diverged { step: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
