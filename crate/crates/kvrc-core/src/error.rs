//! Error type shared by all core modules.

use core::fmt;

/// Errors produced by the inference core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Matrix dimensions do not admit the requested product.
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    /// A vector with no direction: zero norm or zero length.
    DegenerateEmbedding,
    /// Model configuration violates a structural invariant.
    InvalidConfig { reason: &'static str },
    /// The sequence would exceed the model's context window.
    ContextOverflow { position: usize, limit: usize },
    /// A forward step was asked to process zero new tokens.
    EmptyStep,
    /// The operation needs at least one cache entry.
    EmptyCache,
    /// Token ids do not decode to valid UTF-8; `offset` is the first bad index.
    Decode { offset: usize },
    /// A token id outside the model vocabulary.
    InvalidToken { position: usize, id: u32 },
    /// Cache-build input prompt at `index` does not fit the context window.
    PromptOverflow {
        index: usize,
        tokens: usize,
        limit: usize,
    },
    /// Cache-build input prompt at `index` is empty.
    EmptyPrompt { index: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch {
                left_rows,
                left_cols,
                right_rows,
                right_cols,
            } => write!(
                f,
                "shape mismatch: cannot multiply {left_rows}x{left_cols} by {right_rows}x{right_cols}"
            ),
            Error::DegenerateEmbedding => write!(f, "degenerate embedding: vector has zero norm"),
            Error::InvalidConfig { reason } => write!(f, "invalid model config: {reason}"),
            Error::ContextOverflow { position, limit } => write!(
                f,
                "context overflow: position {position} exceeds window of {limit} tokens"
            ),
            Error::EmptyStep => write!(f, "empty step: at least one new token is required"),
            Error::EmptyCache => write!(f, "empty cache: operation needs at least one entry"),
            Error::Decode { offset } => {
                write!(f, "token decode error: invalid UTF-8 at token offset {offset}")
            }
            Error::InvalidToken { position, id } => {
                write!(f, "invalid token id {id} at position {position}")
            }
            Error::PromptOverflow {
                index,
                tokens,
                limit,
            } => write!(
                f,
                "prompt {index} has {tokens} tokens, exceeding the {limit}-token context window"
            ),
            Error::EmptyPrompt { index } => write!(f, "prompt {index} is empty"),
        }
    }
}

impl core::error::Error for Error {}
