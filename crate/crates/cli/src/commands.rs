//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use backupdiff_core::ingest::{ingest, IngestContext, SourceFormat, SourceSpec};
use backupdiff_core::pathmap::{ContainerResolver, MappingRules};
use backupdiff_core::replay::{load_numbers, replay_published};
use backupdiff_core::report::{emit_table, DatasetReport, ReportFormat};
use backupdiff_core::simdiff::WeightSide;
use backupdiff_core::{Digest, Platform, Snapshot, SnapshotLabel};
use backupdiff_fixturegen::{gen_run, load_plan, random_plan, write_run, FIXTURE_PREFIX};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::audit::{render_audit, AuditInfo};
use crate::manifest::{EvaluationManifest, RunSpec};
use crate::pipeline::{evaluate, EvaluateOptions};
use crate::{build_report, read_run_records, write_outputs, EXIT_FAILED_RUN, EXIT_IDENTITY, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "backupdiff", version, about = "Differential evaluation of smartphone backups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a snapshot directory from one source.
    Ingest(IngestArgs),
    /// Synthetic fixtures.
    #[command(subcommand)]
    Fixture(FixtureCommand),
    /// Evaluate every run of a manifest and write the report.
    Evaluate(EvaluateArgs),
    /// Re-render a published table from its numbers.
    Replay(ReplayArgs),
    /// Rebuild the report from run_<id>.json files.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    DirTree,
    Tar,
    AndroidAb,
    IosBackupDir,
}

impl From<FormatArg> for SourceFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::DirTree => SourceFormat::DirTree,
            FormatArg::Tar => SourceFormat::Tar,
            FormatArg::AndroidAb => SourceFormat::AndroidAb,
            FormatArg::IosBackupDir => SourceFormat::IosBackupDir,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LabelArg {
    Pre,
    Backup,
    Post,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlatformArg {
    Android,
    Ios,
    Generic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SideArg {
    Pre,
    Backup,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TableFormat {
    Md,
    Csv,
    Json,
}

impl From<TableFormat> for ReportFormat {
    fn from(f: TableFormat) -> Self {
        match f {
            TableFormat::Md => ReportFormat::Markdown,
            TableFormat::Csv => ReportFormat::Csv,
            TableFormat::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long, value_enum)]
    format: FormatArg,
    #[arg(long)]
    path: PathBuf,
    #[arg(long, value_enum, default_value = "pre")]
    label: LabelArg,
    #[arg(long, value_enum, default_value = "generic")]
    platform: PlatformArg,
    #[arg(long, default_value_t = 1)]
    run_id: u32,
    /// Mapping rules file instead of the built-in table.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Reference snapshot directory whose container metadata resolves iOS
    /// app domains.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Source option as key=value (device_prefix, include_prefixes).
    #[arg(long = "option", value_name = "KEY=VALUE")]
    options: Vec<String>,
    /// Snapshot directory to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum FixtureCommand {
    /// Write pre/, backup.ab, post/, expected.json and a one-run manifest.
    Gen(FixtureGenArgs),
}

#[derive(Debug, Args)]
struct FixtureGenArgs {
    #[arg(long, conflicts_with = "seed", required_unless_present = "seed")]
    plan: Option<PathBuf>,
    /// Generate a random valid plan from this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 200)]
    max_entries: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, value_enum)]
    weight_side: Option<SideArg>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    numbers: PathBuf,
    #[arg(long, value_enum, default_value = "md")]
    format: TableFormat,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    from: PathBuf,
    #[arg(long, value_enum, default_value = "md")]
    format: TableFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Fixture(FixtureCommand::Gen(a)) => cmd_fixture_gen(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn usage(message: impl std::fmt::Display) -> i32 {
    eprintln!("error: {message}");
    EXIT_USAGE
}

fn failure(message: impl std::fmt::Display) -> i32 {
    eprintln!("error: {message}");
    EXIT_FAILED_RUN
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), i32> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| failure(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_ingest(a: IngestArgs) -> i32 {
    let mut spec = SourceSpec::new(a.format.into(), &a.path);
    for opt in &a.options {
        let Some((k, v)) = opt.split_once('=') else {
            return usage(format!("option {opt:?} is not KEY=VALUE"));
        };
        spec = spec.with_option(k, v);
    }
    let label = match a.label {
        LabelArg::Pre => SnapshotLabel::Pre,
        LabelArg::Backup => SnapshotLabel::Backup,
        LabelArg::Post => SnapshotLabel::Post,
    };
    let platform = match a.platform {
        PlatformArg::Android => Platform::Android,
        PlatformArg::Ios => Platform::Ios,
        PlatformArg::Generic => Platform::Generic,
    };
    let mut ctx = IngestContext::new(label, platform, a.run_id);
    if let Some(rules) = &a.rules {
        match MappingRules::load(rules) {
            Ok(r) => ctx.rules = r,
            Err(e) => return usage(e),
        }
    }
    if let Some(reference) = &a.reference {
        match Snapshot::load_dir(reference) {
            Ok(s) => ctx.resolver = ContainerResolver::from_reference(&s).0,
            Err(e) => return usage(e),
        }
    }
    let ingested = match ingest(&spec, &ctx) {
        Ok(i) => i,
        Err(e) => return failure(e),
    };
    if let Err(e) = ingested.snapshot.write_dir(&a.out) {
        return failure(e);
    }
    let r = &ingested.report;
    println!(
        "{} entries, {} skipped, {} unmapped, {} missing blobs, {} key-value carriers",
        ingested.snapshot.len(),
        r.skipped.len(),
        r.unmapped.len(),
        r.missing_blobs.len(),
        r.kv_carriers.len()
    );
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    EXIT_OK
}

fn cmd_fixture_gen(a: FixtureGenArgs) -> i32 {
    let plan = match (&a.plan, a.seed) {
        (Some(p), _) => match load_plan(p) {
            Ok(plan) => plan,
            Err(e) => return usage(format!("{}: {e}", p.display())),
        },
        (None, Some(seed)) => random_plan(seed, a.max_entries),
        (None, None) => return usage("--plan or --seed is required"),
    };
    let run = match gen_run(&plan) {
        Ok(r) => r,
        Err(e) => return usage(e),
    };
    let paths = match write_run(&run, &a.out) {
        Ok(p) => p,
        Err(e) => return failure(e),
    };
    let tree = |p: &Path| {
        SourceSpec::new(SourceFormat::DirTree, p.strip_prefix(&a.out).unwrap_or(p)).with_option("device_prefix", FIXTURE_PREFIX)
    };
    let manifest = EvaluationManifest {
        dataset_label: format!("Fixture seed {}", plan.seed),
        section: None,
        platform: Platform::Android,
        runs: vec![RunSpec {
            run_id: 1,
            pre: tree(&paths.pre),
            backup: SourceSpec::new(SourceFormat::AndroidAb, paths.backup_ab.strip_prefix(&a.out).unwrap_or(&paths.backup_ab)),
            post: tree(&paths.post),
        }],
        recipes_file: None,
        mapping_rules: None,
        weight_side: WeightSide::Pre,
        output_dir: "report".into(),
        scope: Vec::new(),
        overlap_row: false,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    if let Err(e) = fs::write(a.out.join("evaluation.json"), text) {
        return failure(e);
    }
    println!(
        "pre {} / backup {} / post {} files written to {}",
        run.pre.len(),
        run.backup.len(),
        run.post.len(),
        a.out.display()
    );
    EXIT_OK
}

fn cmd_evaluate(a: EvaluateArgs) -> i32 {
    let started = chrono::Utc::now();
    let manifest = match EvaluationManifest::load(&a.manifest) {
        Ok(m) => m,
        Err(e) => return usage(e),
    };
    let resources = match manifest.validate() {
        Ok(r) => r,
        Err(e) => return usage(e),
    };
    let opts = EvaluateOptions {
        jobs: a.jobs,
        weight_side: a.weight_side.map(|s| match s {
            SideArg::Pre => WeightSide::Pre,
            SideArg::Backup => WeightSide::Backup,
        }),
        tmpdir: None,
    };
    let eval = match evaluate(&manifest, &resources, &opts) {
        Ok(e) => e,
        Err(e) => return failure(e),
    };
    let mut code = eval.exit_code();
    if let Err(e) = write_outputs(&eval, &manifest.output_dir) {
        code = code.max(failure(format!("{}: {e}", manifest.output_dir.display())));
    }
    let info = AuditInfo {
        manifest_path: Some(&a.manifest),
        manifest_digest: fs::read(&a.manifest).ok().map(|b| Digest::of(&b).to_hex()),
        resources: &resources,
        started,
        finished: chrono::Utc::now(),
        exit_code: code,
    };
    if let Err(e) = fs::write(manifest.output_dir.join(crate::AUDIT_LOG), render_audit(&info, &eval)) {
        code = code.max(failure(e));
    }
    for r in &eval.records {
        if r.failed_parts() > 0 {
            eprintln!("run {} failed", r.run_id);
        }
    }
    if eval.identity_violations() > 0 {
        eprintln!("{} identity violations; see the report", eval.identity_violations());
    }
    code
}

fn cmd_replay(a: ReplayArgs) -> i32 {
    let table = match load_numbers(&a.numbers) {
        Ok(t) => t,
        Err(e) => return usage(e),
    };
    let report = match replay_published(&table) {
        Ok(r) => r,
        Err(e) => return usage(e),
    };
    if let Err(code) = emit(&emit_table(&report, a.format.into()), a.out.as_deref()) {
        return code;
    }
    let flagged: usize = report.datasets.iter().map(DatasetReport::identity_violations).sum();
    for ds in &report.datasets {
        for g in &ds.groups {
            for v in &g.identity_violations {
                eprintln!("flagged: {} group of {}: {}: {}", ds.dataset, g.count, v.identity, v.detail);
            }
        }
    }
    if flagged > 0 {
        EXIT_IDENTITY
    } else {
        EXIT_OK
    }
}

fn cmd_report(a: ReportArgs) -> i32 {
    let records = match read_run_records(&a.from) {
        Ok(r) => r,
        Err(e) => return usage(format!("{}: {e}", a.from.display())),
    };
    if records.is_empty() {
        return usage(format!("no run_<id>.json files in {}", a.from.display()));
    }
    let report = build_report(&records);
    if let Err(code) = emit(&emit_table(&report, a.format.into()), a.out.as_deref()) {
        return code;
    }
    let failed = records.iter().any(|r| r.failed_parts() > 0);
    let violations = records.iter().map(|r| r.identity_violations()).sum::<usize>()
        + report.datasets.iter().map(DatasetReport::identity_violations).sum::<usize>();
    if violations > 0 {
        EXIT_IDENTITY
    } else if failed {
        EXIT_FAILED_RUN
    } else {
        EXIT_OK
    }
}
