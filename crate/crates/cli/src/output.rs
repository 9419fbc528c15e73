//! File writers: trace CSVs, summary JSON, sweep CSV, and the run
//! manifest. All text output is UTF-8 with LF line endings; floats use
//! the shortest round-trip representation so repeated runs are
//! byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use cvarshield::filter::TraceRecord;
use cvarshield::scenario::{
    BetaSweepRow, MonteCarloOutput, ScenarioConfig, ViolationReport,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    /// SHA-256 of the canonical JSON serialization of the executed config
    /// (after CLI overrides), hex encoded.
    pub config_hash: String,
    pub wall_clock_seconds: f64,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
}

/// Hex SHA-256 of the canonical config serialization.
pub fn config_hash(cfg: &ScenarioConfig) -> String {
    let digest = Sha256::digest(cfg.canonical_json().as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        write!(hex, "{byte:02x}").expect("writing to a string cannot fail");
    }
    hex
}

fn ensure_dir(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create `{}`: {e}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("cannot write `{}`: {e}", path.display()))
}

/// Render one rollout trace as CSV with the fixed column schema
/// `t,x_1..x_n,u_legacy_1..m,u_1..m,h,margin,status`.
pub fn trace_csv(records: &[TraceRecord], state_dim: usize, control_dim: usize) -> String {
    let mut text = String::new();
    text.push('t');
    for i in 1..=state_dim {
        let _ = write!(text, ",x_{i}");
    }
    for i in 1..=control_dim {
        let _ = write!(text, ",u_legacy_{i}");
    }
    for i in 1..=control_dim {
        let _ = write!(text, ",u_{i}");
    }
    text.push_str(",h,margin,status\n");
    for record in records {
        let _ = write!(text, "{}", record.t);
        for i in 0..state_dim {
            let _ = write!(text, ",{}", record.x[i]);
        }
        for i in 0..control_dim {
            let _ = write!(text, ",{}", record.u_legacy[i]);
        }
        for i in 0..control_dim {
            let _ = write!(text, ",{}", record.u[i]);
        }
        let _ = writeln!(
            text,
            ",{},{},{}",
            record.h_value, record.margin, record.status
        );
    }
    text
}

/// Write per-rollout trace CSVs plus the summary JSON. Returns the
/// relative paths written (manifest not included).
pub fn write_simulation(
    out_dir: &Path,
    cfg: &ScenarioConfig,
    outcome: &MonteCarloOutput,
) -> Result<Vec<String>, String> {
    ensure_dir(out_dir)?;
    let traces_dir = out_dir.join("traces");
    ensure_dir(&traces_dir)?;
    let n = cfg.state_dim();
    let m = cfg.control_dim();

    let mut outputs = Vec::new();
    for (index, trace) in outcome.traces.iter().enumerate() {
        if let Ok(records) = trace {
            let name = format!("traces/rollout_{index:05}.csv");
            write_file(&out_dir.join(&name), &trace_csv(records, n, m))?;
            outputs.push(name);
        }
    }
    let summary = summary_json(&outcome.report);
    write_file(&out_dir.join("summary.json"), &summary)?;
    outputs.push("summary.json".to_string());
    Ok(outputs)
}

pub fn summary_json(report: &ViolationReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}

/// Plot-ready sweep CSV: one row per confidence level.
pub fn sweep_csv(rows: &[BetaSweepRow]) -> String {
    let mut text =
        String::from("beta,violation_rate,violation_count,mean_interference,mean_margin\n");
    for row in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            row.beta,
            row.report.violation_rate,
            row.report.violation_count,
            row.report.mean_interference,
            row.report.mean_margin
        );
    }
    text
}

pub fn write_sweep(out_dir: &Path, rows: &[BetaSweepRow]) -> Result<Vec<String>, String> {
    ensure_dir(out_dir)?;
    write_file(&out_dir.join("sweep.csv"), &sweep_csv(rows))?;
    Ok(vec!["sweep.csv".to_string()])
}

pub fn write_manifest(
    out_dir: &Path,
    cfg: &ScenarioConfig,
    command: &str,
    wall_clock_seconds: f64,
    outputs: &[String],
) -> Result<(), String> {
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_hash: config_hash(cfg),
        wall_clock_seconds,
        outputs: outputs.to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_file(&out_dir.join("manifest.json"), &text)
}
