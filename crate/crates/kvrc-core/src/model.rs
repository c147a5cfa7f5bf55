//! Decoder-only transformer with incremental KV-cached decoding.
//!
//! GPT-2 style pre-norm blocks: causal multi-head attention, a 4x feed
//! forward with GELU, layer norm before each sublayer and once at the end,
//! logits tied to the token embedding. Positions use a parameter-free
//! sinusoidal table so resumed decoding at an offset is exactly reproducible.
//!
//! Every kernel here operates row by row and accumulates in f64, so a
//! sequence processed in one call and the same sequence processed in chunks
//! through [`Model::forward_step`] produce identical states.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::clock::Clock;
use crate::error::Error;
use crate::numerics::{self, Matrix};
use crate::tokenizer::TokenId;

/// Weight initialization scale, GPT-2's published value.
const INIT_STD: f32 = 0.02;
const LN_EPS: f64 = 1e-5;

/// Architecture and seeding parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Desk-scale defaults: 4 layers, 4 heads, width 128, 1024-token window.
    fn default() -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_head: 32,
            vocab_size: 256,
            max_context: 1024,
            seed: 42,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.d_model != self.n_heads * self.d_head {
            return Err(Error::InvalidConfig {
                reason: "d_model must equal n_heads * d_head",
            });
        }
        if self.n_layers == 0
            || self.n_heads == 0
            || self.d_head == 0
            || self.vocab_size == 0
            || self.max_context == 0
        {
            return Err(Error::InvalidConfig {
                reason: "all dimensions must be at least 1",
            });
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::InvalidConfig {
                reason: "d_model must be even for sinusoidal positions",
            });
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a hash over every config field, seed included.
    /// Binds serialized caches to the exact weights that produced them.
    pub fn fingerprint(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let fields = [
            self.n_layers as u64,
            self.n_heads as u64,
            self.d_model as u64,
            self.d_head as u64,
            self.vocab_size as u64,
            self.max_context as u64,
            self.seed,
        ];
        let mut hash = OFFSET;
        for field in fields {
            for byte in field.to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(PRIME);
            }
        }
        hash
    }
}

/// Per-layer key/value states for a processed prefix.
///
/// Each layer stores keys and values row-major as `[seq_len, n_heads * d_head]`,
/// i.e. one row per position, matching the projection output so appends are
/// plain extends. The logical shape per layer is `[n_heads, seq_len, d_head]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    n_heads: usize,
    d_head: usize,
    seq_len: usize,
    layers: Vec<LayerKv>,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerKv {
    k: Vec<f32>,
    v: Vec<f32>,
}

impl KvCache {
    pub fn empty(n_layers: usize, n_heads: usize, d_head: usize) -> Self {
        KvCache {
            n_heads,
            d_head,
            seq_len: 0,
            layers: (0..n_layers)
                .map(|_| LayerKv {
                    k: Vec::new(),
                    v: Vec::new(),
                })
                .collect(),
        }
    }

    /// Rebuilds a cache from per-layer `(k, v)` rows, validating lengths.
    pub fn from_parts(
        n_heads: usize,
        d_head: usize,
        seq_len: usize,
        layers: Vec<(Vec<f32>, Vec<f32>)>,
    ) -> Result<Self, Error> {
        let row = n_heads * d_head;
        if row == 0 || layers.is_empty() {
            return Err(Error::InvalidConfig {
                reason: "cache needs at least one layer and one head",
            });
        }
        let expected = seq_len * row;
        for (k, v) in &layers {
            if k.len() != expected || v.len() != expected {
                return Err(Error::InvalidConfig {
                    reason: "cache tensor length does not match seq_len",
                });
            }
        }
        Ok(KvCache {
            n_heads,
            d_head,
            seq_len,
            layers: layers.into_iter().map(|(k, v)| LayerKv { k, v }).collect(),
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn d_head(&self) -> usize {
        self.d_head
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn is_empty(&self) -> bool {
        self.seq_len == 0
    }

    /// Key rows for one layer, `[seq_len, n_heads * d_head]` row-major.
    pub fn layer_k(&self, layer: usize) -> &[f32] {
        &self.layers[layer].k
    }

    pub fn layer_v(&self, layer: usize) -> &[f32] {
        &self.layers[layer].v
    }

    /// Drops all positions at or beyond `new_len`.
    pub fn truncate(&mut self, new_len: usize) {
        if new_len >= self.seq_len {
            return;
        }
        let keep = new_len * self.n_heads * self.d_head;
        for layer in &mut self.layers {
            layer.k.truncate(keep);
            layer.v.truncate(keep);
        }
        self.seq_len = new_len;
    }

    /// Pre-sizes every layer for `extra` more positions.
    pub fn reserve(&mut self, extra: usize) {
        let add = extra * self.n_heads * self.d_head;
        for layer in &mut self.layers {
            layer.k.reserve(add);
            layer.v.reserve(add);
        }
    }

    fn append_layer(&mut self, layer: usize, k_rows: &[f32], v_rows: &[f32]) {
        self.layers[layer].k.extend_from_slice(k_rows);
        self.layers[layer].v.extend_from_slice(v_rows);
    }

    fn advance(&mut self, n: usize) {
        self.seq_len += n;
    }
}

/// Logits for the last fed position plus the updated cache.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// One logit per vocabulary entry, for the final position of this call.
    pub logits: Vec<f32>,
    /// Updated cache; `None` only for `forward_full` without `use_cache`.
    pub cache: Option<KvCache>,
}

#[derive(Debug)]
struct LayerNorm {
    gamma: Vec<f32>,
    beta: Vec<f32>,
}

#[derive(Debug)]
struct Block {
    ln_1: LayerNorm,
    wq: Matrix,
    bq: Vec<f32>,
    wk: Matrix,
    bk: Vec<f32>,
    wv: Matrix,
    bv: Vec<f32>,
    wo: Matrix,
    bo: Vec<f32>,
    ln_2: LayerNorm,
    w_up: Matrix,
    b_up: Vec<f32>,
    w_down: Matrix,
    b_down: Vec<f32>,
}

/// An initialized decoder. Immutable after construction; the logit head is
/// tied to the token embedding.
#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    embed: Matrix,
    positions: Matrix,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
}

impl Model {
    /// Builds a model with weights drawn from a seeded ChaCha12 stream:
    /// weight matrices are N(0, 0.02), biases zero, layer norms unit.
    /// Fill order is fixed (embedding, then per layer wq, wk, wv, wo,
    /// w_up, w_down), so a seed fully determines every parameter.
    pub fn new(config: ModelConfig) -> Result<Self, Error> {
        config.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let normal = Normal::<f32>::new(0.0, INIT_STD).expect("finite std");
        let mut fill = |rows: usize, cols: usize| -> Matrix {
            let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            Matrix::new(rows, cols, data)
        };

        let d = config.d_model;
        let embed = fill(config.vocab_size, d);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln_1: LayerNorm::unit(d),
                wq: fill(d, d),
                bq: vec![0.0; d],
                wk: fill(d, d),
                bk: vec![0.0; d],
                wv: fill(d, d),
                bv: vec![0.0; d],
                wo: fill(d, d),
                bo: vec![0.0; d],
                ln_2: LayerNorm::unit(d),
                w_up: fill(d, 4 * d),
                b_up: vec![0.0; 4 * d],
                w_down: fill(4 * d, d),
                b_down: vec![0.0; d],
            })
            .collect();

        Ok(Model {
            positions: sinusoidal_table(config.max_context, d),
            ln_f: LayerNorm::unit(d),
            config,
            embed,
            blocks,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn empty_cache(&self) -> KvCache {
        KvCache::empty(
            self.config.n_layers,
            self.config.n_heads,
            self.config.d_head,
        )
    }

    /// Causal forward pass over a whole prompt from position 0.
    pub fn forward_full(&self, tokens: &[TokenId], use_cache: bool) -> Result<StepOutput, Error> {
        let mut cache = self.empty_cache();
        let logits = self.run(tokens, &mut cache)?;
        Ok(StepOutput {
            logits,
            cache: use_cache.then_some(cache),
        })
    }

    /// Continues from cached states: computes keys and values only for
    /// `new_tokens`, whose positions start at `past.seq_len()`.
    pub fn forward_step(&self, new_tokens: &[TokenId], past: KvCache) -> Result<StepOutput, Error> {
        let mut cache = past;
        let logits = self.run(new_tokens, &mut cache)?;
        Ok(StepOutput {
            logits,
            cache: Some(cache),
        })
    }

    /// Greedy decoding for exactly `max_new_tokens` steps. Returns only the
    /// generated ids plus wall time measured around the whole loop. Ties in
    /// the argmax go to the lowest token id, making decoding a total
    /// deterministic function of the inputs.
    pub fn generate(
        &self,
        input_ids: &[TokenId],
        past: Option<KvCache>,
        max_new_tokens: usize,
        clock: &dyn Clock,
    ) -> Result<(Vec<TokenId>, f64), Error> {
        let mut cache = past.unwrap_or_else(|| self.empty_cache());
        let end = cache.seq_len() + input_ids.len() + max_new_tokens;
        if end > self.config.max_context {
            return Err(Error::ContextOverflow {
                position: end,
                limit: self.config.max_context,
            });
        }
        if input_ids.is_empty() {
            return Err(Error::EmptyStep);
        }
        let start = clock.now_secs();
        let mut output = Vec::with_capacity(max_new_tokens);
        if max_new_tokens == 0 {
            return Ok((output, clock.now_secs() - start));
        }
        cache.reserve(input_ids.len() + max_new_tokens);
        let logits = self.run(input_ids, &mut cache)?;
        let mut next = argmax(&logits);
        output.push(next);
        for _ in 1..max_new_tokens {
            let logits = self.run(&[next], &mut cache)?;
            next = argmax(&logits);
            output.push(next);
        }
        Ok((output, clock.now_secs() - start))
    }

    /// Prompt embedding: mean of the final hidden states (after the last
    /// layer norm) over all positions, scaled to unit L2 norm.
    pub fn embed_prompt(&self, tokens: &[TokenId]) -> Result<Vec<f32>, Error> {
        if tokens.is_empty() {
            return Err(Error::DegenerateEmbedding);
        }
        let mut cache = self.empty_cache();
        let hidden = self.run_hidden(tokens, &mut cache)?;
        let d = self.config.d_model;
        let mut mean = vec![0.0f32; d];
        let inv = 1.0 / hidden.rows() as f64;
        for (j, m) in mean.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for i in 0..hidden.rows() {
                acc += hidden.get(i, j) as f64;
            }
            *m = (acc * inv) as f32;
        }
        numerics::l2_normalize(&mean)
    }

    /// One pass over `new_tokens` given (and extending) `cache`; returns the
    /// final hidden states for the new rows. Used by cache building, which
    /// needs the cache and the pooled embedding from a single pass.
    pub(crate) fn run_hidden(
        &self,
        new_tokens: &[TokenId],
        cache: &mut KvCache,
    ) -> Result<Matrix, Error> {
        let n_new = new_tokens.len();
        let past = cache.seq_len();
        if n_new == 0 {
            return Err(Error::EmptyStep);
        }
        if past + n_new > self.config.max_context {
            return Err(Error::ContextOverflow {
                position: past + n_new,
                limit: self.config.max_context,
            });
        }
        for (i, &id) in new_tokens.iter().enumerate() {
            if id as usize >= self.config.vocab_size {
                return Err(Error::InvalidToken {
                    position: past + i,
                    id,
                });
            }
        }

        let d = self.config.d_model;
        let mut x = Matrix::zeros(n_new, d);
        for (i, &id) in new_tokens.iter().enumerate() {
            let emb = self.embed.row(id as usize);
            let pos = self.positions.row(past + i);
            for (out, (&e, &p)) in x.row_mut(i).iter_mut().zip(emb.iter().zip(pos)) {
                *out = e + p;
            }
        }

        for (layer, block) in self.blocks.iter().enumerate() {
            let normed = block.ln_1.apply(&x);
            let q = linear(&normed, &block.wq, &block.bq);
            let k = linear(&normed, &block.wk, &block.bk);
            let v = linear(&normed, &block.wv, &block.bv);
            cache.append_layer(layer, k.data(), v.data());
            let attn = self.attention(&q, cache.layer_k(layer), cache.layer_v(layer), past);
            let proj = linear(&attn, &block.wo, &block.bo);
            add_in_place(&mut x, &proj);

            let normed = block.ln_2.apply(&x);
            let mut up = linear(&normed, &block.w_up, &block.b_up);
            gelu_in_place(&mut up);
            let down = linear(&up, &block.w_down, &block.b_down);
            add_in_place(&mut x, &down);
        }
        cache.advance(n_new);

        let hidden = self.ln_f.apply(&x);
        debug_assert!(hidden.is_finite(), "forward produced non-finite states");
        Ok(hidden)
    }

    fn run(&self, new_tokens: &[TokenId], cache: &mut KvCache) -> Result<Vec<f32>, Error> {
        let hidden = self.run_hidden(new_tokens, cache)?;
        Ok(self.project_logits(hidden.row(hidden.rows() - 1)))
    }

    /// Logits for a single hidden row against the tied embedding.
    fn project_logits(&self, hidden_row: &[f32]) -> Vec<f32> {
        (0..self.config.vocab_size)
            .map(|t| numerics::dot(hidden_row, self.embed.row(t)))
            .collect()
    }

    /// Logits at every position of a prompt; test support for causality
    /// probes, never used on the decoding path.
    #[cfg(test)]
    pub(crate) fn all_position_logits(&self, tokens: &[TokenId]) -> Result<Matrix, Error> {
        let mut cache = self.empty_cache();
        let hidden = self.run_hidden(tokens, &mut cache)?;
        let mut out = Matrix::zeros(hidden.rows(), self.config.vocab_size);
        for i in 0..hidden.rows() {
            let logits = self.project_logits(hidden.row(i));
            out.row_mut(i).copy_from_slice(&logits);
        }
        Ok(out)
    }

    /// Causal scaled dot-product attention for `q` rows whose absolute
    /// positions start at `past`. Keys and values cover all cached positions
    /// including the rows just appended for this call; query at absolute
    /// position t attends to positions 0..=t.
    fn attention(&self, q: &Matrix, keys: &[f32], values: &[f32], past: usize) -> Matrix {
        let n_heads = self.config.n_heads;
        let d_head = self.config.d_head;
        let d = self.config.d_model;
        let scale = 1.0 / libm::sqrt(d_head as f64);

        let mut out = Matrix::zeros(q.rows(), d);
        let mut scores: Vec<f32> = Vec::with_capacity(past + q.rows());
        let mut acc = vec![0.0f64; d_head];
        for i in 0..q.rows() {
            let t = past + i;
            let q_row = q.row(i);
            for head in 0..n_heads {
                let h0 = head * d_head;
                let q_head = &q_row[h0..h0 + d_head];
                scores.clear();
                for j in 0..=t {
                    let k_head = &keys[j * d + h0..j * d + h0 + d_head];
                    let mut s = 0.0f64;
                    for (&a, &b) in q_head.iter().zip(k_head) {
                        s += a as f64 * b as f64;
                    }
                    scores.push((s * scale) as f32);
                }
                numerics::softmax_in_place(&mut scores);
                acc.fill(0.0);
                for (j, &w) in scores.iter().enumerate() {
                    let w = w as f64;
                    let v_head = &values[j * d + h0..j * d + h0 + d_head];
                    for (a, &v) in acc.iter_mut().zip(v_head) {
                        *a += w * v as f64;
                    }
                }
                for (o, &a) in out.row_mut(i)[h0..h0 + d_head].iter_mut().zip(acc.iter()) {
                    *o = a as f32;
                }
            }
        }
        out
    }
}

impl LayerNorm {
    fn unit(d: usize) -> Self {
        LayerNorm {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
        }
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        let d = x.cols();
        let mut out = Matrix::zeros(x.rows(), d);
        for i in 0..x.rows() {
            let row = x.row(i);
            let mut mean = 0.0f64;
            for &v in row {
                mean += v as f64;
            }
            mean /= d as f64;
            let mut var = 0.0f64;
            for &v in row {
                let c = v as f64 - mean;
                var += c * c;
            }
            var /= d as f64;
            let inv = 1.0 / libm::sqrt(var + LN_EPS);
            for (j, (o, &v)) in out.row_mut(i).iter_mut().zip(row).enumerate() {
                *o = ((v as f64 - mean) * inv) as f32 * self.gamma[j] + self.beta[j];
            }
        }
        out
    }
}

/// `x * w + b`, bias broadcast over rows.
fn linear(x: &Matrix, w: &Matrix, b: &[f32]) -> Matrix {
    let mut y = numerics::matmul(x, w).expect("projection shapes fixed at init");
    for i in 0..y.rows() {
        for (o, &bias) in y.row_mut(i).iter_mut().zip(b) {
            *o += bias;
        }
    }
    y
}

fn add_in_place(x: &mut Matrix, y: &Matrix) {
    debug_assert_eq!(x.rows(), y.rows());
    for i in 0..x.rows() {
        for (a, &b) in x.row_mut(i).iter_mut().zip(y.row(i)) {
            *a += b;
        }
    }
}

/// GELU with the tanh approximation, evaluated in f64.
fn gelu_in_place(x: &mut Matrix) {
    const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
    for i in 0..x.rows() {
        for v in x.row_mut(i) {
            let z = *v as f64;
            let inner = SQRT_2_OVER_PI * (z + 0.044715 * z * z * z);
            *v = (0.5 * z * (1.0 + libm::tanh(inner))) as f32;
        }
    }
}

/// Index of the greatest logit; ties resolve to the lowest token id.
fn argmax(logits: &[f32]) -> TokenId {
    let mut best = 0usize;
    let mut best_v = logits[0];
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best as TokenId
}

/// Sinusoidal position table: row p holds interleaved
/// sin(p * w_i), cos(p * w_i) with w_i = 10000^(-2i/d), scaled to the same
/// magnitude as the token embedding init so neither signal drowns the
/// other, matching how GPT-2 initializes its positional table.
fn sinusoidal_table(max_context: usize, d: usize) -> Matrix {
    let mut table = Matrix::zeros(max_context, d);
    for p in 0..max_context {
        let row = table.row_mut(p);
        for i in 0..d / 2 {
            let freq = libm::pow(10000.0, -(2.0 * i as f64) / d as f64);
            let angle = p as f64 * freq;
            row[2 * i] = (INIT_STD as f64 * libm::sin(angle)) as f32;
            row[2 * i + 1] = (INIT_STD as f64 * libm::cos(angle)) as f32;
        }
    }
    table
}
