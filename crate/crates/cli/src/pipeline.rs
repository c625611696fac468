//! Ingest → map → extract → classify → similarity → report, per manifest.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use backupdiff_core::classify::{check_cardinality_identities, classify_run, IdentityViolation, RunInput};
use backupdiff_core::contentx::{explain_db_mismatch, extract_backup, extract_reference, DbExplanation, ExtractionRecipe};
use backupdiff_core::ingest::{ingest, IngestContext, IngestReport, KvCarrier, SourceFormat, SourceSpec};
use backupdiff_core::pathmap::ContainerResolver;
use backupdiff_core::report::{DatasetOptions, DatasetReport, FailedRun, IdentityPolicy, Layout, Report, RunSummary};
use backupdiff_core::simdiff::{aggregate_run_similarity, WeightSide};
use backupdiff_core::{Digest, Platform, RunClassification, Snapshot, SnapshotLabel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::{EvaluationManifest, Resources, RunSpec};

/// Environment variable naming the scratch directory.
pub const TMPDIR_ENV: &str = "BACKUPDIFF_TMPDIR";

/// Result of one classification attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Outcome {
    Classified {
        classification: RunClassification,
        /// Every mismatch weighed zero, so the similarity columns are 0.
        #[serde(default)]
        zero_weight: bool,
        /// Mismatches whose values could not be loaded for similarity.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        similarity_excluded: Vec<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        identity_violations: Vec<IdentityViolation>,
    },
    Failed {
        reason: String,
    },
}

impl Outcome {
    fn failed(reason: impl Into<String>) -> Self {
        Outcome::Failed { reason: reason.into() }
    }

    pub fn classification(&self) -> Option<&RunClassification> {
        match self {
            Outcome::Classified { classification, .. } => Some(classification),
            Outcome::Failed { .. } => None,
        }
    }

    fn violations(&self) -> usize {
        match self {
            Outcome::Classified {
                identity_violations, ..
            } => identity_violations.len(),
            Outcome::Failed { .. } => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentOutcome {
    pub label: String,
    #[serde(flatten)]
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// What ingestion reported about one snapshot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestNotes {
    pub entries: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unmapped: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_blobs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl IngestNotes {
    fn of(snapshot: &Snapshot, report: &IngestReport) -> Self {
        IngestNotes {
            entries: snapshot.len(),
            skipped: report.skipped.clone(),
            unmapped: report.unmapped.clone(),
            missing_blobs: report.missing_blobs.clone(),
            warnings: report.warnings.clone(),
        }
    }
}

/// Everything written to `run_<id>.json`; enough to rebuild the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: u32,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
    #[serde(default)]
    pub overlap_row: bool,
    pub file_based: Outcome,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub content: Vec<ContentOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre: Option<IngestNotes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backup: Option<IngestNotes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post: Option<IngestNotes>,
}

impl RunRecord {
    pub fn failed_parts(&self) -> usize {
        std::iter::once(&self.file_based)
            .chain(self.content.iter().map(|c| &c.outcome))
            .filter(|o| matches!(o, Outcome::Failed { .. }))
            .count()
    }

    pub fn identity_violations(&self) -> usize {
        self.file_based.violations() + self.content.iter().map(|c| c.outcome.violations()).sum::<usize>()
    }
}

/// Digest of one evidence source, for the audit log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputDigest {
    pub run_id: u32,
    pub label: SnapshotLabel,
    pub spec: SourceSpec,
    /// `file-sha256` for single files, `listing-sha256` (over the
    /// `digest  name` lines of the ingested snapshot) for directories.
    pub method: &'static str,
    pub digest: Result<Digest, String>,
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateOptions {
    /// Worker threads; 0 or 1 runs sequentially.
    pub jobs: usize,
    pub weight_side: Option<WeightSide>,
    /// Scratch directory; defaults to `$BACKUPDIFF_TMPDIR`, then the
    /// system temp dir.
    pub tmpdir: Option<PathBuf>,
}

pub fn scratch_base(opts: &EvaluateOptions) -> PathBuf {
    opts.tmpdir
        .clone()
        .or_else(|| std::env::var_os(TMPDIR_ENV).map(PathBuf::from))
        .unwrap_or_else(std::env::temp_dir)
}

fn file_digest(path: &Path) -> Result<Digest, String> {
    let f = File::open(path).map_err(|e| e.to_string())?;
    Digest::of_reader(BufReader::new(f)).map(|(d, _)| d).map_err(|e| e.to_string())
}

pub fn listing_digest(snapshot: &Snapshot) -> Digest {
    let mut listing = String::new();
    for e in snapshot.entries() {
        listing.push_str(&format!("{}  {}\n", e.digest.to_hex(), e.name));
    }
    Digest::of(listing.as_bytes())
}

struct Side {
    snapshot: Snapshot,
    report: IngestReport,
}

fn ingest_side(
    spec: &SourceSpec,
    label: SnapshotLabel,
    run_id: u32,
    platform: Platform,
    res: &Resources,
    resolver: ContainerResolver,
    blob_dir: &Path,
) -> (Result<Side, String>, InputDigest) {
    let mut ctx = IngestContext::new(label, platform, run_id);
    ctx.rules = res.rules.clone();
    ctx.resolver = resolver;
    ctx.blob_dir = Some(blob_dir.to_path_buf());
    let streamed = matches!(spec.format, SourceFormat::Tar | SourceFormat::AndroidAb);
    let result = ingest(spec, &ctx).map_err(|e| format!("{label} ingestion failed: {e}"));
    let digest = if streamed {
        file_digest(&spec.path)
    } else {
        result
            .as_ref()
            .map(|i| listing_digest(&i.snapshot))
            .map_err(Clone::clone)
    };
    let input = InputDigest {
        run_id,
        label,
        spec: spec.clone(),
        method: if streamed { "file-sha256" } else { "listing-sha256" },
        digest,
    };
    let side = result.map(|i| Side {
        snapshot: i.snapshot,
        report: i.report,
    });
    (side, input)
}

/// Sets `wal_explained` on database mismatches a Pre `-wal` sidecar
/// accounts for.
fn explain_wal(rc: &mut RunClassification, pre: &Snapshot, backup: &Snapshot) {
    for rec in &mut rc.mismatches {
        let Some(wal) = pre.get(&format!("{}-wal", rec.name)) else {
            continue;
        };
        let (Some(p), Some(b)) = (pre.get(&rec.name), backup.get(&rec.name)) else {
            continue;
        };
        if let (Ok(p), Ok(w), Ok(b)) = (p.load(), wal.load(), b.load()) {
            rec.wal_explained = explain_db_mismatch(&p, Some(&w), &b) == DbExplanation::WalExplained;
        }
    }
}

fn classify(input: &RunInput, side: WeightSide, wal: bool) -> Outcome {
    let mut rc = classify_run(input);
    let sim = {
        let (pre, backup) = match &input.scope_filter {
            Some(p) => (input.pre.filter_prefixes(p), input.backup.filter_prefixes(p)),
            None => (input.pre.clone(), input.backup.clone()),
        };
        if wal {
            explain_wal(&mut rc, &pre, &backup);
        }
        aggregate_run_similarity(&mut rc.mismatches, &pre, &backup, side)
    };
    rc.r_w_mean = sim.r_w_mean;
    rc.r_w_std = sim.r_w_std;
    let identity_violations = check_cardinality_identities(&rc);
    Outcome::Classified {
        classification: rc,
        zero_weight: sim.zero_weight,
        similarity_excluded: sim.excluded,
        identity_violations,
    }
}

fn content_run(
    recipe: &ExtractionRecipe,
    run_id: u32,
    sides: [&Snapshot; 3],
    carriers: &[KvCarrier],
    side: WeightSide,
) -> ContentOutcome {
    let [pre, backup, post] = sides;
    let mut warnings = Vec::new();
    let mut extract = || -> Result<RunInput, String> {
        let describe = |what: &str, e: backupdiff_core::contentx::ContentError| format!("{what}: {e}");
        let p = extract_reference(recipe, pre).map_err(|e| describe("pre", e))?;
        let b = extract_backup(recipe, backup, carriers).map_err(|e| describe("backup", e))?;
        let q = extract_reference(recipe, post).map_err(|e| describe("post", e))?;
        let snapshot = |label, entries| Snapshot::new(label, pre.platform, run_id, entries);
        for (label, w) in [("pre", &p.warnings), ("backup", &b.warnings), ("post", &q.warnings)] {
            warnings.extend(w.iter().map(|w| format!("{label}: {w}")));
        }
        Ok(RunInput {
            run_id,
            pre: snapshot(SnapshotLabel::Pre, p.entries),
            backup: snapshot(SnapshotLabel::Backup, b.entries),
            post: snapshot(SnapshotLabel::Post, q.entries),
            scope_filter: None,
        })
    };
    let outcome = match extract() {
        Ok(input) => classify(&input, side, false),
        Err(reason) => Outcome::failed(reason),
    };
    ContentOutcome {
        label: recipe.label.clone(),
        outcome,
        warnings,
    }
}

/// Classifies one run: file-based over the whole (scoped) snapshots, and
/// once per recipe over the extracted content.
pub fn evaluate_run(
    manifest: &EvaluationManifest,
    res: &Resources,
    run: &RunSpec,
    side: WeightSide,
    scratch: &Path,
) -> (RunRecord, Vec<InputDigest>) {
    let mut record = RunRecord {
        run_id: run.run_id,
        dataset: manifest.dataset_label.clone(),
        section: manifest.section.clone(),
        overlap_row: manifest.overlap_row,
        file_based: Outcome::failed("not evaluated"),
        content: Vec::new(),
        pre: None,
        backup: None,
        post: None,
    };
    let fail_all = |record: &mut RunRecord, reason: String| {
        record.file_based = Outcome::failed(reason.clone());
        record.content = res
            .recipes
            .iter()
            .map(|r| ContentOutcome {
                label: r.label.clone(),
                outcome: Outcome::failed(reason.clone()),
                warnings: Vec::new(),
            })
            .collect();
    };
    let blob_dir = match tempfile::Builder::new().prefix("backupdiff-run-").tempdir_in(scratch) {
        Ok(d) => d,
        Err(e) => {
            fail_all(&mut record, format!("scratch directory in {}: {e}", scratch.display()));
            return (record, Vec::new());
        }
    };
    let platform = manifest.platform;
    let id = run.run_id;
    let mut digests = Vec::new();
    let (pre, d) = ingest_side(&run.pre, SnapshotLabel::Pre, id, platform, res, ContainerResolver::new(), blob_dir.path());
    digests.push(d);
    let mut resolver = ContainerResolver::new();
    if let (Ok(pre), Platform::Ios) = (&pre, platform) {
        let (r, warnings) = ContainerResolver::from_reference(&pre.snapshot);
        for w in warnings {
            log::warn!("run {id}: container metadata {w}");
        }
        resolver = r;
    }
    let (backup, d) = ingest_side(&run.backup, SnapshotLabel::Backup, id, platform, res, resolver, blob_dir.path());
    digests.push(d);
    let (post, d) = ingest_side(&run.post, SnapshotLabel::Post, id, platform, res, ContainerResolver::new(), blob_dir.path());
    digests.push(d);
    let (pre, backup, post) = match (pre, backup, post) {
        (Ok(a), Ok(b), Ok(c)) => (a, b, c),
        (a, b, c) => {
            let reason = [a.err(), b.err(), c.err()].into_iter().flatten().collect::<Vec<_>>().join("; ");
            fail_all(&mut record, reason);
            return (record, digests);
        }
    };
    record.pre = Some(IngestNotes::of(&pre.snapshot, &pre.report));
    record.backup = Some(IngestNotes::of(&backup.snapshot, &backup.report));
    record.post = Some(IngestNotes::of(&post.snapshot, &post.report));
    let input = RunInput {
        run_id: id,
        pre: pre.snapshot,
        backup: backup.snapshot,
        post: post.snapshot,
        scope_filter: (!manifest.scope.is_empty()).then(|| manifest.scope.clone()),
    };
    record.file_based = classify(&input, side, true);
    record.content = res
        .recipes
        .iter()
        .map(|r| content_run(r, id, [&input.pre, &input.backup, &input.post], &backup.report.kv_carriers, side))
        .collect();
    (record, digests)
}

fn dataset(
    name: String,
    section: Option<String>,
    outcomes: &[(u32, &Outcome)],
    layout: Layout,
    overlap_row: bool,
) -> DatasetReport {
    let mut summaries = Vec::new();
    let mut failed = Vec::new();
    for (run_id, outcome) in outcomes {
        match outcome {
            Outcome::Classified { classification, .. } => summaries.push(RunSummary::from_classification(classification)),
            Outcome::Failed { reason } => failed.push(FailedRun {
                run_id: *run_id,
                reason: reason.clone(),
            }),
        }
    }
    let options = DatasetOptions {
        layout,
        overlap_row,
        policy: IdentityPolicy::Exact,
    };
    DatasetReport::build(name, section, &summaries, failed, options)
}

/// The report of a set of run records: the file-based dataset, then one
/// content dataset per recipe label in first-seen order.
pub fn build_report(records: &[RunRecord]) -> Report {
    let mut records: Vec<&RunRecord> = records.iter().collect();
    records.sort_by_key(|r| r.run_id);
    let Some(first) = records.first() else {
        return Report { datasets: Vec::new() };
    };
    let file: Vec<(u32, &Outcome)> = records.iter().map(|r| (r.run_id, &r.file_based)).collect();
    let mut datasets = vec![dataset(first.dataset.clone(), first.section.clone(), &file, Layout::File, first.overlap_row)];
    let mut labels: Vec<&str> = Vec::new();
    for r in &records {
        for c in &r.content {
            if !labels.contains(&c.label.as_str()) {
                labels.push(&c.label);
            }
        }
    }
    for label in labels {
        let outcomes: Vec<(u32, &Outcome)> = records
            .iter()
            .flat_map(|r| r.content.iter().filter(|c| c.label == label).map(move |c| (r.run_id, &c.outcome)))
            .collect();
        datasets.push(dataset(label.to_string(), first.section.clone(), &outcomes, Layout::Content, false));
    }
    Report { datasets }
}

/// Everything one `evaluate` produced.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub records: Vec<RunRecord>,
    pub report: Report,
    pub digests: Vec<InputDigest>,
}

impl Evaluation {
    pub fn failed_runs(&self) -> usize {
        self.records.iter().filter(|r| r.failed_parts() > 0).count()
    }

    pub fn identity_violations(&self) -> usize {
        self.records.iter().map(RunRecord::identity_violations).sum::<usize>()
            + self.report.datasets.iter().map(DatasetReport::identity_violations).sum::<usize>()
    }

    /// 2 on any identity violation, else 1 if a run failed, else 0.
    pub fn exit_code(&self) -> i32 {
        if self.identity_violations() > 0 {
            crate::EXIT_IDENTITY
        } else if self.failed_runs() > 0 {
            crate::EXIT_FAILED_RUN
        } else {
            crate::EXIT_OK
        }
    }
}

/// Evaluates every run of a validated manifest; runs are processed in
/// parallel when `jobs > 1`, and results are always reduced in id order.
pub fn evaluate(manifest: &EvaluationManifest, res: &Resources, opts: &EvaluateOptions) -> std::io::Result<Evaluation> {
    let side = opts.weight_side.unwrap_or(manifest.weight_side);
    let scratch = scratch_base(opts);
    fs::create_dir_all(&scratch)?;
    let runs = manifest.sorted_runs();
    let work = |run: &&RunSpec| evaluate_run(manifest, res, run, side, &scratch);
    let results: Vec<(RunRecord, Vec<InputDigest>)> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(std::io::Error::other)?;
        pool.install(|| runs.par_iter().map(work).collect())
    } else {
        runs.iter().map(work).collect()
    };
    let (records, digests): (Vec<RunRecord>, Vec<Vec<InputDigest>>) = results.into_iter().unzip();
    let report = build_report(&records);
    Ok(Evaluation {
        records,
        report,
        digests: digests.into_iter().flatten().collect(),
    })
}
