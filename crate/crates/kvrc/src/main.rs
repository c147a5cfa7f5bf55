//! `kvrc` — build activation caches, benchmark baseline vs recycled
//! generation, and emit comparison tables.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kvrc_core::store::build_cache;
use kvrc_core::Model;

use kvrc::config::RunConfig;
use kvrc::csvio;
use kvrc::error::KvrcError;
use kvrc::format;
use kvrc::harness::{self, ComparisonRow};
use kvrc::{corpus, RunMode};

#[derive(Parser)]
#[command(
    name = "kvrc",
    version,
    about = "Cross-prompt KV-cache recycling benchmark",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cache prompt through the model and serialize the store
    BuildCache {
        /// Prompt CSV (single `prompt` column)
        #[arg(long)]
        prompts: Option<PathBuf>,
        /// Output cache file
        #[arg(long)]
        out: Option<PathBuf>,
        /// TOML config file
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Time from-scratch generation for every test prompt
    RunBaseline {
        #[arg(long)]
        prompts: Option<PathBuf>,
        /// Output CSV
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Time cache-recycled generation for every test prompt
    RunRecycled {
        #[arg(long)]
        prompts: Option<PathBuf>,
        /// Cache file produced by build-cache
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Join baseline and recycled CSVs into a comparison table
    Compare {
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        recycled: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also fit speedup = alpha * (reused/m) and print alpha
        #[arg(long)]
        alpha: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// End-to-end run on the shipped demo corpus
    Demo {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn load_model(config: &RunConfig) -> Result<Model, KvrcError> {
    Model::new(config.model_config()).map_err(|e| KvrcError::Config(e.to_string()))
}

fn run(command: Command) -> Result<(), KvrcError> {
    match command {
        Command::BuildCache {
            prompts,
            out,
            config,
        } => {
            let config = RunConfig::load_or_default(config.as_deref())?;
            let model = load_model(&config)?;
            let prompts_path = prompts.unwrap_or_else(|| config.cache_prompts.clone());
            let out_path = out.unwrap_or_else(|| config.cache_file.clone());
            let prompt_list = csvio::read_prompts(&prompts_path)?;
            let store = build_cache(&model, &prompt_list)?;
            format::save_store(&store, &out_path)?;
            println!(
                "cached {} prompts under fingerprint {:#018x} -> {}",
                store.len(),
                store.model_fingerprint(),
                out_path.display()
            );
            Ok(())
        }
        Command::RunBaseline {
            prompts,
            out,
            config,
        } => {
            let config = RunConfig::load_or_default(config.as_deref())?;
            let model = load_model(&config)?;
            let prompts_path = prompts.unwrap_or_else(|| config.test_prompts.clone());
            let out_path = out.unwrap_or_else(|| config.baseline_csv.clone());
            let prompt_list = csvio::read_prompts(&prompts_path)?;
            let records = harness::run_baseline(&model, &prompt_list, &config.bench_options());
            csvio::write_baseline(&records, &out_path)?;
            println!(
                "baseline: {} prompts -> {}",
                records.len(),
                out_path.display()
            );
            Ok(())
        }
        Command::RunRecycled {
            prompts,
            cache,
            out,
            config,
        } => {
            let config = RunConfig::load_or_default(config.as_deref())?;
            let model = load_model(&config)?;
            let prompts_path = prompts.unwrap_or_else(|| config.test_prompts.clone());
            let cache_path = cache.unwrap_or_else(|| config.cache_file.clone());
            let out_path = out.unwrap_or_else(|| config.recycled_csv.clone());
            let prompt_list = csvio::read_prompts(&prompts_path)?;
            let store = format::load_store(&cache_path, model.config().fingerprint())?;
            let records =
                harness::run_recycled(&model, &store, &prompt_list, &config.bench_options())?;
            let recycled = records
                .iter()
                .filter(|r| r.mode == RunMode::Recycled)
                .count();
            csvio::write_recycled(&records, &out_path)?;
            println!(
                "recycled: {} prompts ({} reused, {} fallback) -> {}",
                records.len(),
                recycled,
                records.len() - recycled,
                out_path.display()
            );
            Ok(())
        }
        Command::Compare {
            baseline,
            recycled,
            out,
            alpha,
            config,
        } => {
            let config = RunConfig::load_or_default(config.as_deref())?;
            let model = load_model(&config)?;
            let baseline_path = baseline.unwrap_or_else(|| config.baseline_csv.clone());
            let recycled_path = recycled.unwrap_or_else(|| config.recycled_csv.clone());
            let out_path = out.unwrap_or_else(|| config.comparison_csv.clone());
            let base_records = csvio::read_baseline(&baseline_path)?;
            let rec_records = csvio::read_recycled(&recycled_path)?;
            let rows = harness::compare(&model, &base_records, &rec_records)?;
            csvio::write_comparison(&rows, &out_path)?;
            print_comparison(&rows);
            println!("comparison -> {}", out_path.display());
            if alpha {
                let fit = harness::fit_alpha(&rows)?;
                println!(
                    "alpha fit: speedup ~ {:.4} * (k/m) over {} rows, residual norm {:.6}",
                    fit.alpha, fit.rows_used, fit.residual_norm
                );
            }
            Ok(())
        }
        Command::Demo { config } => {
            let config = RunConfig::load_or_default(config.as_deref())?;
            demo(&config)
        }
    }
}

/// Full pipeline on the shipped corpus: build cache, baseline pass,
/// recycled pass, comparison table.
fn demo(config: &RunConfig) -> Result<(), KvrcError> {
    let model = load_model(config)?;
    let mc = model.config();
    println!(
        "model: {} layers, {} heads, d_model {}, context {}, seed {}",
        mc.n_layers, mc.n_heads, mc.d_model, mc.max_context, mc.seed
    );

    let cache_prompts = corpus::demo_cache_prompts();
    let test_prompts = corpus::demo_test_prompts();
    let store = build_cache(&model, &cache_prompts)?;
    format::save_store(&store, &config.cache_file)?;
    println!(
        "built cache: {} entries -> {}",
        store.len(),
        config.cache_file.display()
    );

    let opts = config.bench_options();
    let baseline = harness::run_baseline(&model, &test_prompts, &opts);
    csvio::write_baseline(&baseline, &config.baseline_csv)?;
    println!(
        "baseline: {} prompts -> {}",
        baseline.len(),
        config.baseline_csv.display()
    );

    let recycled = harness::run_recycled(&model, &store, &test_prompts, &opts)?;
    csvio::write_recycled(&recycled, &config.recycled_csv)?;
    let hits = recycled
        .iter()
        .filter(|r| r.mode == RunMode::Recycled)
        .count();
    println!(
        "recycled: {} prompts ({} reused, {} fallback) -> {}",
        recycled.len(),
        hits,
        recycled.len() - hits,
        config.recycled_csv.display()
    );

    let rows = harness::compare(&model, &baseline, &recycled)?;
    csvio::write_comparison(&rows, &config.comparison_csv)?;
    println!("comparison -> {}\n", config.comparison_csv.display());
    print_comparison(&rows);
    match harness::fit_alpha(&rows) {
        Ok(fit) => println!(
            "alpha fit: speedup ~ {:.4} * (k/m) over {} rows, residual norm {:.6}",
            fit.alpha, fit.rows_used, fit.residual_norm
        ),
        Err(KvrcError::NoFit) => println!("alpha fit: no rows with nonzero reuse"),
        Err(other) => return Err(other),
    }
    Ok(())
}

fn print_comparison(rows: &[ComparisonRow]) {
    println!(
        "{:<44} {:>10} {:>10} {:>7} {:>7} {:>9}",
        "prompt", "base_s", "rec_s", "reused", "sim", "speedup"
    );
    for row in rows {
        println!(
            "{:<44} {:>10} {:>10} {:>7} {:>7.3} {:>8.1}%",
            ellipsize(&row.prompt, 44),
            csvio::fmt_sig(row.baseline_latency_s, 6),
            csvio::fmt_sig(row.recycled_latency_s, 6),
            row.reused_tokens,
            row.output_similarity,
            row.speedup_pct
        );
    }
    println!("mean speedup: {:.1}%", harness::mean_speedup_pct(rows));
}

fn ellipsize(text: &str, width: usize) -> String {
    let clean: String = text
        .chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .collect();
    if clean.chars().count() <= width {
        clean
    } else {
        let cut: String = clean.chars().take(width - 3).collect();
        format!("{cut}...")
    }
}
