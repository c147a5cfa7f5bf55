//! Shipped benchmark corpora.
//!
//! The demo corpus is ten short cache prompts plus six test prompts that
//! extend six of them, mirroring the near-duplicate / extended-prefix
//! design of the evaluation. The synthetic corpus provides long prompts with
//! deep prefix overlap, where skipping prefix computation clearly wins.

use crate::error::KvrcError;

const CACHE_PROMPTS_CSV: &str = include_str!(concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../data/cache_prompts.csv"
));
const TEST_PROMPTS_CSV: &str = include_str!(concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../data/test_prompts.csv"
));

fn parse_embedded(csv_text: &str) -> Vec<String> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    reader
        .records()
        .map(|r| r.expect("embedded corpus is valid CSV")[0].to_string())
        .collect()
}

/// The ten shipped cache prompts.
pub fn demo_cache_prompts() -> Vec<String> {
    parse_embedded(CACHE_PROMPTS_CSV)
}

/// The six shipped test prompts; each extends one cache prompt verbatim.
pub fn demo_test_prompts() -> Vec<String> {
    parse_embedded(TEST_PROMPTS_CSV)
}

/// A synthetic long-prompt case: the cache prompt is an exact prefix
/// covering three quarters of the test prompt.
#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub cache_prompt: String,
    pub test_prompt: String,
}

impl SyntheticCase {
    /// Test prompt length in tokens (bytes).
    pub fn prompt_tokens(&self) -> usize {
        self.test_prompt.len()
    }

    /// Cache prompt length in tokens; equals the expected reuse depth.
    pub fn reuse_tokens(&self) -> usize {
        self.cache_prompt.len()
    }
}

/// Word pools with disjoint vocabulary so each test prompt retrieves its
/// own parent.
const POOLS: [[&str; 8]; 6] = [
    [
        "ocean", "tide", "coral", "reef", "wave", "current", "salt", "spray",
    ],
    [
        "forest", "canopy", "moss", "fern", "timber", "grove", "root", "bark",
    ],
    [
        "desert", "dune", "mirage", "oasis", "sand", "cactus", "heat", "wind",
    ],
    [
        "glacier", "ice", "crevasse", "summit", "frost", "slope", "ridge", "snow",
    ],
    [
        "meadow", "clover", "pollen", "bloom", "grass", "nectar", "field", "seed",
    ],
    [
        "volcano", "magma", "crater", "ash", "lava", "vent", "pumice", "basalt",
    ],
];

/// Repeats a word pool until the text is exactly `len` bytes.
fn procedural_text(pool: &[&str], len: usize) -> String {
    let mut text = String::with_capacity(len + 16);
    let mut i = 0usize;
    while text.len() < len {
        if !text.is_empty() {
            text.push(' ');
        }
        text.push_str(pool[i % pool.len()]);
        i += 1;
    }
    text.truncate(len);
    text
}

/// Builds the long-prompt corpus: two prompts per length tier. Tiers are
/// 256, 512, and the largest prompt that still fits `max_context` with the
/// generation budget (1024-class). The cache prompt covers 75% of each
/// test prompt, so every case has k/m = 0.75.
pub fn synthetic_cases(
    max_context: usize,
    max_new_tokens: usize,
) -> Result<Vec<SyntheticCase>, KvrcError> {
    let cap = max_context.saturating_sub(max_new_tokens);
    let tiers = [256usize, 512, 1024];
    let mut cases = Vec::new();
    for (index, pool) in POOLS.iter().enumerate() {
        let target = tiers[index / 2];
        let m = target.min(cap);
        if m < 8 {
            return Err(KvrcError::Config(format!(
                "context window {max_context} minus budget {max_new_tokens} leaves no room for synthetic prompts"
            )));
        }
        let k = m * 3 / 4;
        let test_prompt = procedural_text(pool, m);
        let cache_prompt = test_prompt[..k].to_string();
        cases.push(SyntheticCase {
            cache_prompt,
            test_prompt,
        });
    }
    Ok(cases)
}

/// Sanity check used by tests: the shipped data files stay well formed.
pub fn demo_corpus_shapes() -> (usize, usize) {
    (demo_cache_prompts().len(), demo_test_prompts().len())
}
