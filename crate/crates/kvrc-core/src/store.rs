//! Cross-prompt activation cache: entries, stacked embedding matrix, and
//! exact nearest-neighbour retrieval.
//!
//! Each entry keeps a prompt, its token ids, the KV states from one cached
//! forward pass, and a unit embedding. Retrieval is a linear argmax scan
//! over dot products; at the store sizes this engine targets, exact search
//! is microseconds and keeps the experiment deterministic.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Error;
use crate::model::{KvCache, Model};
use crate::numerics::{self, Matrix};
use crate::tokenizer::{self, TokenId};

/// One cached prompt: text, ids, KV states, unit embedding.
#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub prompt_text: String,
    pub input_ids: Vec<TokenId>,
    pub kv: KvCache,
    pub embedding: Vec<f32>,
}

impl CacheEntry {
    /// Checks the structural invariants: ids match the prompt text, the KV
    /// states cover exactly the prompt positions, the embedding is unit.
    pub fn validate(&self) -> Result<(), Error> {
        if tokenizer::tokenize(&self.prompt_text) != self.input_ids {
            return Err(Error::InvalidConfig {
                reason: "entry token ids do not match prompt text",
            });
        }
        if self.kv.seq_len() != self.input_ids.len() {
            return Err(Error::InvalidConfig {
                reason: "entry cache length does not match token count",
            });
        }
        let norm: f64 = self.embedding.iter().map(|&x| x as f64 * x as f64).sum();
        if (libm::sqrt(norm) - 1.0).abs() > 1e-6 {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(())
    }
}

/// Immutable collection of cache entries plus their stacked embeddings.
#[derive(Debug, Clone)]
pub struct CacheStore {
    entries: Vec<CacheEntry>,
    embeddings: Matrix,
    model_fingerprint: u64,
}

impl CacheStore {
    /// Assembles a store from validated entries, stacking row i of the
    /// embedding matrix from entry i.
    pub fn from_entries(model_fingerprint: u64, entries: Vec<CacheEntry>) -> Result<Self, Error> {
        if entries.is_empty() {
            return Err(Error::EmptyCache);
        }
        let dim = entries[0].embedding.len();
        for entry in &entries {
            entry.validate()?;
            if entry.embedding.len() != dim {
                return Err(Error::InvalidConfig {
                    reason: "entries disagree on embedding width",
                });
            }
        }
        let mut data = Vec::with_capacity(entries.len() * dim);
        for entry in &entries {
            data.extend_from_slice(&entry.embedding);
        }
        Ok(CacheStore {
            embeddings: Matrix::new(entries.len(), dim, data),
            entries,
            model_fingerprint,
        })
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> &CacheEntry {
        &self.entries[index]
    }

    /// Stacked embeddings, one row per entry.
    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn model_fingerprint(&self) -> u64 {
        self.model_fingerprint
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Runs every prompt through the model once with caching enabled and
/// assembles the store. Entry order follows prompt order.
pub fn build_cache<S: AsRef<str>>(model: &Model, prompts: &[S]) -> Result<CacheStore, Error> {
    if prompts.is_empty() {
        return Err(Error::EmptyCache);
    }
    let limit = model.config().max_context;
    let mut entries = Vec::with_capacity(prompts.len());
    for (index, prompt) in prompts.iter().enumerate() {
        let text = prompt.as_ref();
        let input_ids = tokenizer::tokenize(text);
        if input_ids.is_empty() {
            return Err(Error::EmptyPrompt { index });
        }
        if input_ids.len() > limit {
            return Err(Error::PromptOverflow {
                index,
                tokens: input_ids.len(),
                limit,
            });
        }
        // One pass yields both the KV states and the pooled embedding.
        let mut kv = model.empty_cache();
        let hidden = model.run_hidden(&input_ids, &mut kv)?;
        let d = hidden.cols();
        let mut mean = alloc::vec![0.0f32; d];
        let inv = 1.0 / hidden.rows() as f64;
        for (j, m) in mean.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for i in 0..hidden.rows() {
                acc += hidden.get(i, j) as f64;
            }
            *m = (acc * inv) as f32;
        }
        let embedding = numerics::l2_normalize(&mean)?;
        entries.push(CacheEntry {
            prompt_text: String::from(text),
            input_ids,
            kv,
            embedding,
        });
    }
    CacheStore::from_entries(model.config().fingerprint(), entries)
}

/// Exact retrieval: index and score of the entry whose embedding has the
/// greatest dot product with `query`. Ties break to the lowest index; the
/// score is clamped into [-1, 1].
pub fn retrieve(store: &CacheStore, query: &[f32]) -> Result<(usize, f32), Error> {
    if store.is_empty() {
        return Err(Error::EmptyCache);
    }
    debug_assert_eq!(query.len(), store.embeddings().cols());
    debug_assert!(
        (query.iter().map(|&x| x as f64 * x as f64).sum::<f64>() - 1.0).abs() < 1e-3,
        "retrieval query must be normalized"
    );
    let mut best = 0usize;
    let mut best_score = numerics::dot(store.embeddings().row(0), query);
    for i in 1..store.len() {
        let score = numerics::dot(store.embeddings().row(i), query);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    Ok((best, best_score.clamp(-1.0, 1.0)))
}
