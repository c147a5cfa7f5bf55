//! Benchmark harness and persistence layer for the KV-recycling engine.
//!
//! This crate carries everything that touches the OS: the versioned binary
//! cache file, CSV input and output, the TOML run configuration, monotonic
//! timing, and the baseline-versus-recycled benchmark protocol. The engine
//! itself lives in `kvrc-core`.

pub mod clock;
pub mod config;
pub mod corpus;
pub mod csvio;
pub mod error;
pub mod format;
pub mod harness;
mod util;

pub use clock::MonotonicClock;
pub use config::RunConfig;
pub use error::KvrcError;
pub use harness::{BenchOptions, ComparisonRow, RunMode, RunRecord};
