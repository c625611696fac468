//! The `backupdiff` command line tool.
//!
//! Every invocation ends with one of four exit codes: [`EXIT_OK`],
//! [`EXIT_FAILED_RUN`], [`EXIT_IDENTITY`] or [`EXIT_USAGE`].

pub mod audit;
pub mod commands;
pub mod manifest;
pub mod pipeline;

use std::fs;
use std::io;
use std::path::Path;

use backupdiff_core::report::{emit_table, ReportFormat};

pub use commands::run;
pub use manifest::{EvaluationManifest, ManifestError, Resources, RunSpec};
pub use pipeline::{build_report, evaluate, EvaluateOptions, Evaluation, Outcome, RunRecord};

pub const EXIT_OK: i32 = 0;
/// A run could not be ingested or extracted, or an output could not be
/// written.
pub const EXIT_FAILED_RUN: i32 = 1;
/// A cardinality identity or set partition did not hold.
pub const EXIT_IDENTITY: i32 = 2;
/// Bad command line, manifest, plan or numbers file.
pub const EXIT_USAGE: i32 = 64;

pub const REPORT_STEM: &str = "report";
pub const AUDIT_LOG: &str = "audit.log";

pub fn run_file_name(run_id: u32) -> String {
    format!("run_{run_id}.json")
}

fn pretty<T: serde::Serialize>(value: &T) -> io::Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    Ok(text)
}

/// Writes `run_<id>.json` per run and `report.{md,csv,json}`.
pub fn write_outputs(eval: &Evaluation, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for record in &eval.records {
        fs::write(dir.join(run_file_name(record.run_id)), pretty(record)?)?;
    }
    for format in [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json] {
        let name = format!("{REPORT_STEM}.{}", format.extension());
        fs::write(dir.join(name), emit_table(&eval.report, format))?;
    }
    Ok(())
}

/// Reads every `run_<id>.json` under `dir`, in run id order.
pub fn read_run_records(dir: &Path) -> io::Result<Vec<RunRecord>> {
    let mut records = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let is_run = name
            .strip_prefix("run_")
            .and_then(|r| r.strip_suffix(".json"))
            .is_some_and(|id| id.parse::<u32>().is_ok());
        if is_run {
            let text = fs::read_to_string(&path)?;
            let record: RunRecord = serde_json::from_str(&text)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
            records.push(record);
        }
    }
    records.sort_by_key(|r| r.run_id);
    Ok(records)
}
