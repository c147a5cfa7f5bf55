//! Benchmark protocol: baseline pass, recycled pass, per-prompt comparison,
//! and the speedup-versus-reuse fit.
//!
//! Timing discipline: every measurement repeats W untimed warmups then R
//! timed runs and reports the median, all strictly sequential on a
//! monotonic clock. Retrieval and prompt embedding stay outside the timed
//! region; cache materialization is measured separately as `load_s`.

use std::fmt;
use std::str::FromStr;

use kvrc_core::recycler::{self, RecycleDecision};
use kvrc_core::store::CacheStore;
use kvrc_core::tokenizer::{self, TokenId};
use kvrc_core::{DecisionMode, Model};

use crate::clock::MonotonicClock;
use crate::error::KvrcError;

/// Warmup/repeat counts and the decoding budget for one benchmark pass.
#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub warmups: usize,
    pub repeats: usize,
    pub max_new_tokens: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            warmups: 3,
            repeats: 7,
            max_new_tokens: 100,
        }
    }
}

/// How a benchmark row was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Baseline,
    Recycled,
    FallbackNoPrefix,
    FallbackEmptyCache,
}

impl From<DecisionMode> for RunMode {
    fn from(mode: DecisionMode) -> Self {
        match mode {
            DecisionMode::Recycled => RunMode::Recycled,
            DecisionMode::FallbackNoPrefix => RunMode::FallbackNoPrefix,
            DecisionMode::FallbackEmptyCache => RunMode::FallbackEmptyCache,
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Baseline => "BASELINE",
            RunMode::Recycled => "RECYCLED",
            RunMode::FallbackNoPrefix => "FALLBACK_NO_PREFIX",
            RunMode::FallbackEmptyCache => "FALLBACK_EMPTY_CACHE",
        })
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "BASELINE" => Ok(RunMode::Baseline),
            "RECYCLED" => Ok(RunMode::Recycled),
            "FALLBACK_NO_PREFIX" => Ok(RunMode::FallbackNoPrefix),
            "FALLBACK_EMPTY_CACHE" => Ok(RunMode::FallbackEmptyCache),
            other => Err(format!("unknown run mode {other:?}")),
        }
    }
}

/// One benchmark row.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub prompt: String,
    pub output_text: String,
    pub latency_s: f64,
    pub reused_tokens: usize,
    pub retrieval_score: f32,
    pub mode: RunMode,
    pub load_s: f64,
}

/// Baseline and recycled latencies joined per prompt.
#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub prompt: String,
    pub baseline_latency_s: f64,
    pub recycled_latency_s: f64,
    pub reused_tokens: usize,
    pub output_similarity: f32,
    pub speedup_pct: f64,
}

/// Generated bytes rendered as text; invalid UTF-8 becomes replacement
/// characters so rows stay printable and CSV-safe.
pub fn tokens_to_text(tokens: &[TokenId]) -> String {
    let bytes: Vec<u8> = tokens.iter().map(|&t| t as u8).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("latencies are finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// From-scratch generation for every prompt. A prompt that cannot fit the
/// context window is reported to stderr and skipped rather than aborting
/// the whole pass.
pub fn run_baseline(model: &Model, prompts: &[String], opts: &BenchOptions) -> Vec<RunRecord> {
    let clock = MonotonicClock::new();
    let mut records = Vec::with_capacity(prompts.len());
    for prompt in prompts {
        let ids = tokenizer::tokenize(prompt);
        let mut latencies = Vec::with_capacity(opts.repeats);
        let mut output: Option<Vec<TokenId>> = None;
        let mut failed = false;
        for rep in 0..opts.warmups + opts.repeats {
            match model.generate(&ids, None, opts.max_new_tokens, &clock) {
                Ok((tokens, latency)) => {
                    if rep < opts.warmups {
                        continue;
                    }
                    latencies.push(latency);
                    match &output {
                        None => output = Some(tokens),
                        Some(first) => assert_eq!(
                            first, &tokens,
                            "greedy decoding must be identical across repetitions"
                        ),
                    }
                }
                Err(err) => {
                    eprintln!("warning: skipping baseline prompt {prompt:?}: {err}");
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            continue;
        }
        records.push(RunRecord {
            prompt: prompt.clone(),
            output_text: tokens_to_text(output.as_deref().unwrap_or(&[])),
            latency_s: median(latencies),
            reused_tokens: 0,
            retrieval_score: 0.0,
            mode: RunMode::Baseline,
            load_s: 0.0,
        });
    }
    records
}

/// Recycled generation for every prompt: one retrieval + gate decision per
/// prompt, then the warmup/median protocol over the generation phase.
/// Aborts up front if the store was built under different weights.
pub fn run_recycled(
    model: &Model,
    store: &CacheStore,
    prompts: &[String],
    opts: &BenchOptions,
) -> Result<Vec<RunRecord>, KvrcError> {
    let expected = model.config().fingerprint();
    if store.model_fingerprint() != expected {
        return Err(KvrcError::StaleCache {
            expected,
            found: store.model_fingerprint(),
        });
    }
    let clock = MonotonicClock::new();
    let mut records = Vec::with_capacity(prompts.len());
    for prompt in prompts {
        let ids = tokenizer::tokenize(prompt);
        let decision: RecycleDecision = if store.is_empty() {
            recycler::decide(store, &ids, &[])
        } else {
            let embedding = model.embed_prompt(&ids)?;
            recycler::decide(store, &ids, &embedding)
        };
        let mut latencies = Vec::with_capacity(opts.repeats);
        let mut loads = Vec::with_capacity(opts.repeats);
        let mut output: Option<Vec<TokenId>> = None;
        let mut failed = false;
        for rep in 0..opts.warmups + opts.repeats {
            match recycler::generate_with_decision(
                model,
                store,
                &ids,
                decision.clone(),
                opts.max_new_tokens,
                &clock,
            ) {
                Ok(run) => {
                    if rep < opts.warmups {
                        continue;
                    }
                    latencies.push(run.latency_s);
                    loads.push(run.load_s);
                    match &output {
                        None => output = Some(run.output),
                        Some(first) => assert_eq!(
                            first, &run.output,
                            "greedy decoding must be identical across repetitions"
                        ),
                    }
                }
                Err(err) => {
                    eprintln!("warning: skipping recycled prompt {prompt:?}: {err}");
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            continue;
        }
        records.push(RunRecord {
            prompt: prompt.clone(),
            output_text: tokens_to_text(output.as_deref().unwrap_or(&[])),
            latency_s: median(latencies),
            reused_tokens: decision.reuse_depth,
            retrieval_score: decision.retrieval_score,
            mode: decision.mode.into(),
            load_s: median(loads),
        });
    }
    Ok(records)
}

/// Cosine similarity between the engine's embeddings of two generated
/// texts. Empty texts cannot be embedded: two empty outputs count as
/// identical, one empty as fully dissimilar.
fn output_similarity(model: &Model, a: &str, b: &str) -> Result<f32, KvrcError> {
    let ta = tokenizer::tokenize(a);
    let tb = tokenizer::tokenize(b);
    match (ta.is_empty(), tb.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let ea = model.embed_prompt(&ta)?;
    let eb = model.embed_prompt(&tb)?;
    Ok(kvrc_core::numerics::dot(&ea, &eb).clamp(-1.0, 1.0))
}

/// Joins baseline and recycled records on exact prompt text and computes
/// the per-prompt speedup and output similarity. Both sides must hold the
/// same prompt multiset.
pub fn compare(
    model: &Model,
    baseline: &[RunRecord],
    recycled: &[RunRecord],
) -> Result<Vec<ComparisonRow>, KvrcError> {
    let mut unmatched: Vec<Option<&RunRecord>> = recycled.iter().map(Some).collect();
    let mut rows = Vec::with_capacity(baseline.len());
    for base in baseline {
        let slot = unmatched
            .iter_mut()
            .find(|r| r.map(|r| r.prompt == base.prompt).unwrap_or(false))
            .ok_or_else(|| {
                KvrcError::Join(format!(
                    "prompt {:?} has no recycled counterpart",
                    base.prompt
                ))
            })?;
        let rec = slot.take().expect("slot matched above");
        let speedup_pct = (base.latency_s - rec.latency_s) / base.latency_s * 100.0;
        rows.push(ComparisonRow {
            prompt: base.prompt.clone(),
            baseline_latency_s: base.latency_s,
            recycled_latency_s: rec.latency_s,
            reused_tokens: rec.reused_tokens,
            output_similarity: output_similarity(model, &base.output_text, &rec.output_text)?,
            speedup_pct,
        });
    }
    if let Some(Some(extra)) = unmatched.iter().find(|r| r.is_some()) {
        return Err(KvrcError::Join(format!(
            "recycled prompt {:?} has no baseline counterpart",
            extra.prompt
        )));
    }
    Ok(rows)
}

/// Arithmetic mean of per-row speedups, in percent.
pub fn mean_speedup_pct(rows: &[ComparisonRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|r| r.speedup_pct).sum::<f64>() / rows.len() as f64
}

/// Least-squares fit of speedup fraction against reuse fraction.
#[derive(Debug, Clone, Copy)]
pub struct AlphaFit {
    pub alpha: f64,
    pub residual_norm: f64,
    pub rows_used: usize,
}

/// Fits `S = alpha * (k/m)` through the origin over rows with nonzero
/// reuse, where S is the speedup as a fraction, k the reused tokens, and m
/// the prompt length in tokens.
pub fn fit_alpha(rows: &[ComparisonRow]) -> Result<AlphaFit, KvrcError> {
    let mut sum_xy = 0.0f64;
    let mut sum_xx = 0.0f64;
    let mut points = Vec::new();
    for row in rows {
        if row.reused_tokens == 0 {
            continue;
        }
        let m = tokenizer::tokenize(&row.prompt).len();
        if m == 0 {
            continue;
        }
        let x = row.reused_tokens as f64 / m as f64;
        let y = row.speedup_pct / 100.0;
        sum_xy += x * y;
        sum_xx += x * x;
        points.push((x, y));
    }
    if points.is_empty() || sum_xx == 0.0 {
        return Err(KvrcError::NoFit);
    }
    let alpha = sum_xy / sum_xx;
    let residual_norm = points
        .iter()
        .map(|(x, y)| (y - alpha * x) * (y - alpha * x))
        .sum::<f64>()
        .sqrt();
    Ok(AlphaFit {
        alpha,
        residual_norm,
        rows_used: points.len(),
    })
}
