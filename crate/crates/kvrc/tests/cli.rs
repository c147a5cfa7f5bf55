//! End-to-end CLI tests: subcommand pipeline, file outputs, exit codes
//! (0 success, 1 usage, 2 data, 3 I/O).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_kvrc");

/// Small model + single-repetition protocol so CLI runs stay fast.
const TEST_CONFIG: &str = "\
n_layers = 2
n_heads = 2
d_model = 32
d_head = 16
max_context = 256
seed = 42
max_new_tokens = 12
warmups = 0
repeats = 1
";

fn kvrc(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

fn write_corpus(dir: &Path) {
    fs::write(
        dir.join("cache.csv"),
        "prompt\nshared prefix alpha\nother thing beta\n",
    )
    .unwrap();
    fs::write(
        dir.join("test.csv"),
        "prompt\nshared prefix alpha extended\nunrelated query here\n",
    )
    .unwrap();
    fs::write(dir.join("kvrc.toml"), TEST_CONFIG).unwrap();
}

#[test]
fn full_pipeline_via_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_corpus(dir);

    let out = kvrc(
        dir,
        &[
            "build-cache",
            "--prompts",
            "cache.csv",
            "--out",
            "store.kvrc",
            "--config",
            "kvrc.toml",
        ],
    );
    assert_eq!(
        exit_code(&out),
        0,
        "{:?}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.join("store.kvrc").exists());

    let out = kvrc(
        dir,
        &[
            "run-baseline",
            "--prompts",
            "test.csv",
            "--out",
            "baseline.csv",
            "--config",
            "kvrc.toml",
        ],
    );
    assert_eq!(
        exit_code(&out),
        0,
        "{:?}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = kvrc(
        dir,
        &[
            "run-recycled",
            "--prompts",
            "test.csv",
            "--cache",
            "store.kvrc",
            "--out",
            "recycled.csv",
            "--config",
            "kvrc.toml",
        ],
    );
    assert_eq!(
        exit_code(&out),
        0,
        "{:?}",
        String::from_utf8_lossy(&out.stderr)
    );
    let recycled = fs::read_to_string(dir.join("recycled.csv")).unwrap();
    assert!(recycled.contains("RECYCLED"), "{recycled}");
    assert!(recycled.contains("FALLBACK_NO_PREFIX"), "{recycled}");

    let out = kvrc(
        dir,
        &[
            "compare",
            "--baseline",
            "baseline.csv",
            "--recycled",
            "recycled.csv",
            "--out",
            "comparison.csv",
            "--alpha",
            "--config",
            "kvrc.toml",
        ],
    );
    assert_eq!(
        exit_code(&out),
        0,
        "{:?}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean speedup"), "{stdout}");
    assert!(stdout.contains("alpha fit"), "{stdout}");
    let comparison = fs::read_to_string(dir.join("comparison.csv")).unwrap();
    assert!(comparison.starts_with(
        "prompt,baseline_latency_s,recycled_latency_s,reused_tokens,output_similarity,speedup_pct"
    ));
}

#[test]
fn demo_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    // Default (desk-scale) model shape so retrieval has full fidelity on
    // the shipped corpus; single repetition keeps the run short.
    fs::write(
        dir.join("kvrc.toml"),
        "max_new_tokens = 16\nwarmups = 0\nrepeats = 1\n",
    )
    .unwrap();
    let out = kvrc(dir, &["demo", "--config", "kvrc.toml"]);
    assert_eq!(
        exit_code(&out),
        0,
        "{:?}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean speedup"), "{stdout}");
    assert!(stdout.contains("6 reused, 0 fallback"), "{stdout}");
    for file in [
        "results/cache.kvrc",
        "results/baseline.csv",
        "results/recycled.csv",
        "results/comparison.csv",
    ] {
        assert!(dir.join(file).exists(), "{file} missing");
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = kvrc(dir.path(), &["no-such-command"]);
    assert_eq!(exit_code(&out), 1);
    let out = kvrc(dir.path(), &["build-cache", "--bogus-flag"]);
    assert_eq!(exit_code(&out), 1);
    let out = kvrc(dir.path(), &["--help"]);
    assert_eq!(exit_code(&out), 0);
}

#[test]
fn bad_config_value_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    fs::write(dir.join("kvrc.toml"), "n_heads = 3\n").unwrap();
    fs::write(dir.join("p.csv"), "prompt\nhello\n").unwrap();
    let out = kvrc(
        dir,
        &[
            "build-cache",
            "--prompts",
            "p.csv",
            "--out",
            "s.kvrc",
            "--config",
            "kvrc.toml",
        ],
    );
    assert_eq!(
        exit_code(&out),
        1,
        "{:?}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn stale_cache_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_corpus(dir);
    let out = kvrc(
        dir,
        &[
            "build-cache",
            "--prompts",
            "cache.csv",
            "--out",
            "store.kvrc",
            "--config",
            "kvrc.toml",
        ],
    );
    assert_eq!(exit_code(&out), 0);

    // Same shape, different seed: different weights, so the cache is stale.
    fs::write(
        dir.join("other.toml"),
        TEST_CONFIG.replace("seed = 42", "seed = 43"),
    )
    .unwrap();
    let out = kvrc(
        dir,
        &[
            "run-recycled",
            "--prompts",
            "test.csv",
            "--cache",
            "store.kvrc",
            "--out",
            "recycled.csv",
            "--config",
            "other.toml",
        ],
    );
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stale cache"), "{stderr}");
}

#[test]
fn corrupt_cache_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    write_corpus(dir);
    let out = kvrc(
        dir,
        &[
            "build-cache",
            "--prompts",
            "cache.csv",
            "--out",
            "store.kvrc",
            "--config",
            "kvrc.toml",
        ],
    );
    assert_eq!(exit_code(&out), 0);
    let bytes = fs::read(dir.join("store.kvrc")).unwrap();
    fs::write(dir.join("store.kvrc"), &bytes[..bytes.len() / 2]).unwrap();
    let out = kvrc(
        dir,
        &[
            "run-recycled",
            "--prompts",
            "test.csv",
            "--cache",
            "store.kvrc",
            "--out",
            "recycled.csv",
            "--config",
            "kvrc.toml",
        ],
    );
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("corrupt cache"), "{stderr}");
}

#[test]
fn join_mismatch_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    fs::write(dir.join("kvrc.toml"), TEST_CONFIG).unwrap();
    fs::write(
        dir.join("baseline.csv"),
        "prompt,output,latency_s\nprompt a,out,0.5\n",
    )
    .unwrap();
    fs::write(
        dir.join("recycled.csv"),
        "prompt,output,latency_s,reused_tokens,retrieval_score,mode,load_s\n\
         prompt b,out,0.25,3,0.9,RECYCLED,0.001\n",
    )
    .unwrap();
    let out = kvrc(
        dir,
        &[
            "compare",
            "--baseline",
            "baseline.csv",
            "--recycled",
            "recycled.csv",
            "--out",
            "comparison.csv",
            "--config",
            "kvrc.toml",
        ],
    );
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("join"), "{stderr}");
}

#[test]
fn missing_input_file_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    fs::write(dir.join("kvrc.toml"), TEST_CONFIG).unwrap();
    let out = kvrc(
        dir,
        &[
            "run-baseline",
            "--prompts",
            "missing.csv",
            "--out",
            "baseline.csv",
            "--config",
            "kvrc.toml",
        ],
    );
    assert_eq!(
        exit_code(&out),
        3,
        "{:?}",
        String::from_utf8_lossy(&out.stderr)
    );
}
