//! Harness-level error type with process exit-code mapping.

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by persistence, CSV handling, configuration, and the
/// benchmark protocol.
#[derive(Debug, Error)]
pub enum KvrcError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("corrupt cache file: {reason}")]
    CorruptCache { reason: String },

    #[error(
        "stale cache: file fingerprint {found:#018x} does not match model fingerprint {expected:#018x}; \
         rebuild the cache with the current config"
    )]
    StaleCache { expected: u64, found: u64 },

    #[error("prompt join error: {0}")]
    Join(String),

    #[error("csv schema error: {0}")]
    Schema(String),

    #[error("alpha fit needs at least one row with nonzero reuse")]
    NoFit,

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] kvrc_core::Error),
}

impl KvrcError {
    /// Process exit code: 1 usage, 2 data, 3 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            KvrcError::Usage(_) | KvrcError::Config(_) => 1,
            KvrcError::CorruptCache { .. }
            | KvrcError::StaleCache { .. }
            | KvrcError::Join(_)
            | KvrcError::Schema(_)
            | KvrcError::NoFit
            | KvrcError::Csv(_)
            | KvrcError::Core(_) => 2,
            KvrcError::Io { .. } => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> KvrcError {
        let path = path.into();
        move |source| KvrcError::Io { path, source }
    }
}
