//! Freestanding core of a decoder-only transformer inference engine with
//! cross-prompt KV-cache recycling.
//!
//! The engine captures per-layer attention key/value states for processed
//! prompts, indexes them by model-derived embeddings, and reuses the states
//! when a cached prompt is an exact token prefix of a new prompt, so only
//! the novel suffix has to be computed. Everything here is pure computation
//! over `alloc` containers; file formats, timing sources, and the benchmark
//! CLI live in the `kvrc` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod clock;
pub mod error;
pub mod model;
pub mod numerics;
pub mod recycler;
pub mod store;
pub mod tokenizer;

pub use clock::Clock;
pub use error::Error;
pub use model::{KvCache, Model, ModelConfig, StepOutput};
pub use recycler::{DecisionMode, RecycleDecision, RecycledRun};
pub use store::{CacheEntry, CacheStore};
pub use tokenizer::TokenId;
