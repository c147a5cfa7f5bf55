//! RFC-4180 CSV input and output for prompts and benchmark results.
//!
//! All files are UTF-8 with a header row and fixed columns; floats are
//! written with six significant digits. Reading is strict: the header must
//! match exactly and every record must have the full column count.

use std::path::Path;
use std::str::FromStr;

use crate::error::KvrcError;
use crate::harness::{ComparisonRow, RunMode, RunRecord};
use crate::util::write_atomic;

pub const BASELINE_HEADER: [&str; 3] = ["prompt", "output", "latency_s"];
pub const RECYCLED_HEADER: [&str; 7] = [
    "prompt",
    "output",
    "latency_s",
    "reused_tokens",
    "retrieval_score",
    "mode",
    "load_s",
];
pub const COMPARISON_HEADER: [&str; 6] = [
    "prompt",
    "baseline_latency_s",
    "recycled_latency_s",
    "reused_tokens",
    "output_similarity",
    "speedup_pct",
];

/// Formats a float with `sig` significant digits in plain decimal notation.
pub fn fmt_sig(value: f64, sig: u32) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    if !value.is_finite() {
        return value.to_string();
    }
    let exponent = value.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - exponent).max(0) as usize;
    format!("{value:.decimals$}")
}

/// Reads a prompt file: single `prompt` column, header required.
pub fn read_prompts(path: &Path) -> Result<Vec<String>, KvrcError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => KvrcError::Io {
            path: path.to_owned(),
            source: std::io::Error::other(e.to_string()),
        },
        _ => KvrcError::Csv(e),
    })?;
    let headers = reader.headers()?.clone();
    if headers.len() != 1 || &headers[0] != "prompt" {
        return Err(KvrcError::Schema(format!(
            "{}: expected a single `prompt` column, found header {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut prompts = Vec::new();
    for record in reader.records() {
        let record = record?;
        prompts.push(record[0].to_string());
    }
    Ok(prompts)
}

fn write_rows(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), KvrcError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(&row)?;
    }
    let bytes = writer.into_inner().expect("vec writer cannot fail");
    write_atomic(path, &bytes)
}

/// Emits `prompt,output,latency_s`.
pub fn write_baseline(records: &[RunRecord], path: &Path) -> Result<(), KvrcError> {
    write_rows(
        path,
        &BASELINE_HEADER,
        records.iter().map(|r| {
            vec![
                r.prompt.clone(),
                r.output_text.clone(),
                fmt_sig(r.latency_s, 6),
            ]
        }),
    )
}

/// Emits `prompt,output,latency_s,reused_tokens,retrieval_score,mode,load_s`.
pub fn write_recycled(records: &[RunRecord], path: &Path) -> Result<(), KvrcError> {
    write_rows(
        path,
        &RECYCLED_HEADER,
        records.iter().map(|r| {
            vec![
                r.prompt.clone(),
                r.output_text.clone(),
                fmt_sig(r.latency_s, 6),
                r.reused_tokens.to_string(),
                fmt_sig(r.retrieval_score as f64, 6),
                r.mode.to_string(),
                fmt_sig(r.load_s, 6),
            ]
        }),
    )
}

/// Emits the merged comparison table.
pub fn write_comparison(rows: &[ComparisonRow], path: &Path) -> Result<(), KvrcError> {
    write_rows(
        path,
        &COMPARISON_HEADER,
        rows.iter().map(|r| {
            vec![
                r.prompt.clone(),
                fmt_sig(r.baseline_latency_s, 6),
                fmt_sig(r.recycled_latency_s, 6),
                r.reused_tokens.to_string(),
                fmt_sig(r.output_similarity as f64, 6),
                fmt_sig(r.speedup_pct, 6),
            ]
        }),
    )
}

fn check_header(path: &Path, found: &csv::StringRecord, want: &[&str]) -> Result<(), KvrcError> {
    if found.len() != want.len() || found.iter().zip(want).any(|(a, &b)| a != b) {
        return Err(KvrcError::Schema(format!(
            "{}: expected header {:?}, found {:?}",
            path.display(),
            want,
            found.iter().collect::<Vec<_>>()
        )));
    }
    Ok(())
}

fn parse_f64(path: &Path, field: &str, value: &str) -> Result<f64, KvrcError> {
    value.parse().map_err(|_| {
        KvrcError::Schema(format!(
            "{}: field {field} holds {value:?}, not a number",
            path.display()
        ))
    })
}

/// Reads a baseline results file back into records.
pub fn read_baseline(path: &Path) -> Result<Vec<RunRecord>, KvrcError> {
    let mut reader = csv::Reader::from_path(path).map_err(open_err(path))?;
    check_header(path, &reader.headers()?.clone(), &BASELINE_HEADER)?;
    let mut records = Vec::new();
    for record in reader.records() {
        let record = record?;
        records.push(RunRecord {
            prompt: record[0].to_string(),
            output_text: record[1].to_string(),
            latency_s: parse_f64(path, "latency_s", &record[2])?,
            reused_tokens: 0,
            retrieval_score: 0.0,
            mode: RunMode::Baseline,
            load_s: 0.0,
        });
    }
    Ok(records)
}

/// Reads a recycled results file back into records.
pub fn read_recycled(path: &Path) -> Result<Vec<RunRecord>, KvrcError> {
    let mut reader = csv::Reader::from_path(path).map_err(open_err(path))?;
    check_header(path, &reader.headers()?.clone(), &RECYCLED_HEADER)?;
    let mut records = Vec::new();
    for record in reader.records() {
        let record = record?;
        records.push(RunRecord {
            prompt: record[0].to_string(),
            output_text: record[1].to_string(),
            latency_s: parse_f64(path, "latency_s", &record[2])?,
            reused_tokens: record[3].parse().map_err(|_| {
                KvrcError::Schema(format!(
                    "{}: reused_tokens holds {:?}, not a count",
                    path.display(),
                    &record[3]
                ))
            })?,
            retrieval_score: parse_f64(path, "retrieval_score", &record[4])? as f32,
            mode: RunMode::from_str(&record[5]).map_err(KvrcError::Schema)?,
            load_s: parse_f64(path, "load_s", &record[6])?,
        });
    }
    Ok(records)
}

/// Strict generic read: header plus every record as owned strings.
/// Used by round-trip checks.
pub fn read_csv_fields(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), KvrcError> {
    let mut reader = csv::Reader::from_path(path).map_err(open_err(path))?;
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(record?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn open_err(path: &Path) -> impl FnOnce(csv::Error) -> KvrcError + '_ {
    move |e| match e.kind() {
        csv::ErrorKind::Io(_) => KvrcError::Io {
            path: path.to_owned(),
            source: std::io::Error::other(e.to_string()),
        },
        _ => KvrcError::Csv(e),
    }
}
