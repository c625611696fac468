//! Plain-text audit log: what was evaluated, with which rules, and when.

use std::fmt::Write as _;
use std::path::Path;

use backupdiff_core::model::DIGEST_ALGORITHM;
use chrono::{DateTime, SecondsFormat, Utc};

use crate::manifest::Resources;
use crate::pipeline::Evaluation;

pub struct AuditInfo<'a> {
    pub manifest_path: Option<&'a Path>,
    pub manifest_digest: Option<String>,
    pub resources: &'a Resources,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
    pub exit_code: i32,
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn render_audit(info: &AuditInfo<'_>, eval: &Evaluation) -> String {
    let mut out = String::new();
    let res = info.resources;
    let _ = writeln!(out, "tool backupdiff {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "started {}", stamp(info.started));
    let _ = writeln!(out, "digest-algorithm {DIGEST_ALGORITHM}");
    if let Some(p) = info.manifest_path {
        let digest = info.manifest_digest.as_deref().unwrap_or("unavailable");
        let _ = writeln!(out, "manifest {digest} {}", p.display());
    }
    let _ = writeln!(
        out,
        "mapping-rules {} version {} {}",
        res.rules.digest().to_hex(),
        res.rules.version,
        res.rules_source
    );
    match &res.recipes_digest {
        Some(d) => {
            let labels: Vec<&str> = res.recipes.iter().map(|r| r.label.as_str()).collect();
            let _ = writeln!(out, "recipes {} [{}]", d.to_hex(), labels.join(", "));
        }
        None => {
            let _ = writeln!(out, "recipes none");
        }
    }
    for d in &eval.digests {
        let digest = match &d.digest {
            Ok(x) => x.to_hex(),
            Err(e) => format!("unavailable ({e})"),
        };
        let format = serde_json::to_value(d.spec.format).ok();
        let format = format.as_ref().and_then(|v| v.as_str()).unwrap_or("?");
        let _ = writeln!(
            out,
            "input run {} {} {format} {} {} {digest}",
            d.run_id,
            d.label,
            d.spec.path.display(),
            d.method
        );
    }
    for r in &eval.records {
        let status = if r.failed_parts() > 0 { "failed" } else { "classified" };
        let _ = writeln!(out, "run {} {status}", r.run_id);
    }
    let _ = writeln!(out, "finished {}", stamp(info.finished));
    let _ = writeln!(out, "exit {}", info.exit_code);
    out
}
