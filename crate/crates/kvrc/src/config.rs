//! Run configuration: a flat key = value TOML file carrying the model
//! shape, decoding budget, timing protocol, and default file paths.
//! Every key is optional; CLI flags override file values.

use std::path::{Path, PathBuf};

use kvrc_core::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::KvrcError;
use crate::harness::BenchOptions;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Model shape and seeding.
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub seed: u64,

    // Decoding and timing protocol.
    pub max_new_tokens: usize,
    pub warmups: usize,
    pub repeats: usize,

    // Default file locations, overridable per subcommand flag.
    pub cache_prompts: PathBuf,
    pub test_prompts: PathBuf,
    pub cache_file: PathBuf,
    pub baseline_csv: PathBuf,
    pub recycled_csv: PathBuf,
    pub comparison_csv: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        RunConfig {
            n_layers: model.n_layers,
            n_heads: model.n_heads,
            d_model: model.d_model,
            d_head: model.d_head,
            vocab_size: model.vocab_size,
            max_context: model.max_context,
            seed: model.seed,
            max_new_tokens: 100,
            warmups: 3,
            repeats: 7,
            cache_prompts: "data/cache_prompts.csv".into(),
            test_prompts: "data/test_prompts.csv".into(),
            cache_file: "results/cache.kvrc".into(),
            baseline_csv: "results/baseline.csv".into(),
            recycled_csv: "results/recycled.csv".into(),
            comparison_csv: "results/comparison.csv".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, KvrcError> {
        let text = std::fs::read_to_string(path).map_err(KvrcError::io(path))?;
        toml::from_str(&text).map_err(|e| KvrcError::Config(format!("{}: {e}", path.display())))
    }

    /// Loads `path` if given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, KvrcError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_head: self.d_head,
            vocab_size: self.vocab_size,
            max_context: self.max_context,
            seed: self.seed,
        }
    }

    pub fn bench_options(&self) -> BenchOptions {
        BenchOptions {
            warmups: self.warmups,
            repeats: self.repeats,
            max_new_tokens: self.max_new_tokens,
        }
    }
}
