//! `backupdiff evaluate`, `report` and `replay` end to end.

mod common;

use std::fs;
use std::process::Command;

use backupdiff_cli::{evaluate, read_run_records, EvaluateOptions, EvaluationManifest, Outcome};
use backupdiff_core::ingest::{SourceFormat, SourceSpec};
use backupdiff_core::report::Layout;
use backupdiff_core::Platform;
use backupdiff_fixturegen::{
    gen_ios_fixture, gen_run, gen_wal_fixture, tree_to_tar, write_ios_backup, write_tree, ContentCounts, FileTree,
};
use common::*;

fn run_bin(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn eval_lib(m: &EvaluationManifest) -> backupdiff_cli::Evaluation {
    let res = m.validate().unwrap();
    evaluate(m, &res, &EvaluateOptions::default()).unwrap()
}

#[test]
fn manifest_without_runs_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest("empty", vec![], &dir.path().join("out"));
    let path = write_manifest(&m, &dir.path().join("m.json"));
    let (code, _, err) = run_bin(&["evaluate", "--manifest", path.to_str().unwrap()]);
    assert_eq!(code, 64, "{err}");
    assert!(err.contains("no runs"));
}

#[test]
fn gaps_in_run_ids_are_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let run = gen_run(&unchanged_plan(1, 5)).unwrap();
    let spec = write_device_run(&run, None, &dir.path().join("r"));
    let mut m = manifest("gap", vec![spec.clone(), spec], &dir.path().join("out"));
    m.runs[1].run_id = 3;
    let path = write_manifest(&m, &dir.path().join("m.json"));
    assert_eq!(run_bin(&["evaluate", "--manifest", path.to_str().unwrap()]).0, 64);
    assert_eq!(run_bin(&["evaluate", "--manifest", "/nonexistent/m.json"]).0, 64);
    assert_eq!(run_bin(&["frobnicate"]).0, 64);
    assert_eq!(run_bin(&["--help"]).0, 0);
}

#[test]
fn missing_archive_fails_only_that_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = gen_run(&unchanged_plan(2, 8)).unwrap();
    let good = write_device_run(&run, None, &dir.path().join("r"));
    let mut bad = good.clone();
    bad.backup = SourceSpec::new(SourceFormat::Tar, dir.path().join("missing.tar"));
    let m = manifest("partial", vec![good, bad], &dir.path().join("out"));
    let path = write_manifest(&m, &dir.path().join("m.json"));
    let (code, _, _) = run_bin(&["evaluate", "--manifest", path.to_str().unwrap()]);
    assert_eq!(code, 1);
    let out = dir.path().join("out");
    let records = read_run_records(&out).unwrap();
    assert!(matches!(records[0].file_based, Outcome::Classified { .. }));
    assert!(matches!(&records[1].file_based, Outcome::Failed { reason } if reason.contains("missing.tar")));
    let md = fs::read_to_string(out.join("report.md")).unwrap();
    assert!(md.contains("missing.tar"), "{md}");
    let audit = fs::read_to_string(out.join("audit.log")).unwrap();
    assert!(audit.contains("digest-algorithm sha256"));
    assert!(audit.contains("run 2 failed") && audit.ends_with("exit 1\n"), "{audit}");
}

#[test]
fn twenty_unchanged_runs_form_one_group() {
    let dir = tempfile::tempdir().unwrap();
    let runs = (1..=20)
        .map(|seed| {
            let run = gen_run(&unchanged_plan(seed, 30)).unwrap();
            write_device_run(&run, None, &dir.path().join(format!("r{seed}")))
        })
        .collect();
    let eval = eval_lib(&manifest("Full Backup", runs, &dir.path().join("out")));
    assert_eq!(eval.exit_code(), 0);
    let groups = &eval.report.datasets[0].groups;
    assert_eq!(groups.len(), 1);
    assert_eq!((groups[0].count, groups[0].v_ch, groups[0].p_vector), (20, 0, [0; 4]));
    assert_eq!(groups[0].run_ids, (1..=20).collect::<Vec<u32>>());
}

#[test]
fn bundled_recipes_on_content_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let run = gen_run(&unchanged_plan(4, 3)).unwrap();
    let spec = write_device_run(&run, Some((4, ContentCounts::default())), &dir.path().join("r"));
    let mut m = manifest("Content", vec![spec], &dir.path().join("out"));
    m.recipes_file = Some("builtin".into());
    let eval = eval_lib(&m);
    assert_eq!(eval.exit_code(), 0, "{:#?}", eval.records[0].content);
    let rows: Vec<(String, Vec<String>)> = eval.report.datasets[1..]
        .iter()
        .map(|ds| {
            assert_eq!(ds.layout, Layout::Content);
            let cells = backupdiff_core::report::group_cells(&ds.groups[0], ds.layout);
            (ds.dataset.clone(), cells)
        })
        .collect();
    let want = [
        ("sms", "365 56 365 365 309 0 56 56"),
        ("calllog", "101 20 101 101 81 0 20 20"),
        ("settings", "494 51 494 494 443 0 51 51"),
    ];
    assert_eq!(rows.len(), 3);
    for ((label, cells), (want_label, want_cells)) in rows.iter().zip(want) {
        assert!(label.to_lowercase().contains(want_label), "{label}");
        assert_eq!(cells.join(" "), want_cells, "{label}");
    }
}

#[test]
fn ios_backup_directory_run() {
    let dir = tempfile::tempdir().unwrap();
    let fx = gen_ios_fixture(11, 40);
    write_tree(&fx.reference, &dir.path().join("pre")).unwrap();
    write_tree(&fx.reference, &dir.path().join("post")).unwrap();
    write_ios_backup(&fx.rows, &dir.path().join("backup")).unwrap();
    let spec = backupdiff_cli::RunSpec {
        run_id: 1,
        pre: SourceSpec::new(SourceFormat::DirTree, dir.path().join("pre")),
        backup: SourceSpec::new(SourceFormat::IosBackupDir, dir.path().join("backup")),
        post: SourceSpec::new(SourceFormat::DirTree, dir.path().join("post")),
    };
    let mut m = manifest("Unencrypted Backup", vec![spec], &dir.path().join("out"));
    m.platform = Platform::Ios;
    let eval = eval_lib(&m);
    assert_eq!(eval.exit_code(), 0);
    let notes = eval.records[0].backup.as_ref().unwrap();
    assert!(notes.unmapped.is_empty() && notes.missing_blobs.is_empty());
    let rc = eval.records[0].file_based.classification().unwrap();
    assert_eq!(rc.sets.n_both.iter().cloned().collect::<Vec<_>>(), fx.expected_names);
    assert!(rc.sets.n_new.is_empty() && rc.sets.v_ch.is_empty());
    assert_eq!(rc.sets.n_over.len(), fx.reference.len() - fx.expected_names.len());
}

#[test]
fn uncheckpointed_wal_explains_the_database_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let fx = gen_wal_fixture(5);
    let mut pre = FileTree::new();
    pre.insert("db/store.db".into(), fx.db.clone());
    pre.insert("db/store.db-wal".into(), fx.wal.clone());
    let mut backup = FileTree::new();
    backup.insert("db/store.db".into(), fx.checkpointed.clone());
    write_tree(&pre, &dir.path().join("pre")).unwrap();
    write_tree(&pre, &dir.path().join("post")).unwrap();
    fs::write(dir.path().join("backup.tar"), tree_to_tar(&backup, "")).unwrap();
    let tree = |p: &str| SourceSpec::new(SourceFormat::DirTree, dir.path().join(p)).with_option("device_prefix", "/dev0");
    let spec = backupdiff_cli::RunSpec {
        run_id: 1,
        pre: tree("pre"),
        backup: SourceSpec::new(SourceFormat::Tar, dir.path().join("backup.tar")).with_option("device_prefix", "/dev0"),
        post: tree("post"),
    };
    let eval = eval_lib(&manifest("wal", vec![spec], &dir.path().join("out")));
    let rc = eval.records[0].file_based.classification().unwrap();
    assert_eq!(rc.mismatches.len(), 1);
    assert_eq!(rc.mismatches[0].name, "/dev0/db/store.db");
    assert!(rc.mismatches[0].wal_explained);
    assert_eq!(rc.sets.p_mpre.len(), 1);
}

#[test]
fn report_command_rebuilds_the_report_from_run_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = mixed_manifest(dir.path(), &[3, 4, 5]);
    let (code, _, err) = run_bin(&["evaluate", "--manifest", path.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let out = dir.path().join("out");
    for (format, file) in [("md", "report.md"), ("csv", "report.csv"), ("json", "report.json")] {
        let (code, text, _) = run_bin(&["report", "--from", out.to_str().unwrap(), "--format", format]);
        assert_eq!(code, 0);
        assert_eq!(text, fs::read_to_string(out.join(file)).unwrap(), "{format}");
    }
    // a run file whose sets no longer add up
    let run1 = out.join("run_1.json");
    let mut value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&run1).unwrap()).unwrap();
    let v_eq = value["file_based"]["classification"]["sets"]["v_eq"].as_array_mut().unwrap();
    assert!(!v_eq.is_empty());
    v_eq.pop();
    fs::write(&run1, serde_json::to_string(&value).unwrap()).unwrap();
    let (code, text, _) = run_bin(&["report", "--from", out.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(text.contains("|N_both| = |V_eq| + |V_ch|"), "{text}");
}

#[test]
fn parallel_runs_and_scratch_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = mixed_manifest(dir.path(), &[6, 7, 8, 9]);
    let scratch = dir.path().join("scratch");
    fs::create_dir(&scratch).unwrap();
    let report = || fs::read(dir.path().join("out/report.json")).unwrap();
    let status = Command::new(BIN)
        .args(["evaluate", "--manifest", path.to_str().unwrap(), "--jobs", "4"])
        .env("BACKUPDIFF_TMPDIR", &scratch)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let parallel = report();
    assert_eq!(fs::read_dir(&scratch).unwrap().count(), 0, "scratch space left behind");
    assert_eq!(run_bin(&["evaluate", "--manifest", path.to_str().unwrap()]).0, 0);
    assert_eq!(parallel, report());
}

#[test]
fn weight_side_override() {
    use backupdiff_core::simdiff::WeightSide;
    use backupdiff_fixturegen::{random_plan, FIXTURE_PREFIX};
    let dir = tempfile::tempdir().unwrap();
    let seeds = [12, 13, 14];
    let path = mixed_manifest(dir.path(), &seeds);
    let m = EvaluationManifest::load(&path).unwrap();
    let res = m.validate().unwrap();
    let mut checked = 0;
    for side in [WeightSide::Pre, WeightSide::Backup] {
        let opts = EvaluateOptions {
            weight_side: Some(side),
            ..Default::default()
        };
        let eval = evaluate(&m, &res, &opts).unwrap();
        for (r, seed) in eval.records.iter().zip(seeds) {
            let run = gen_run(&random_plan(seed, 120)).unwrap();
            let tree = match side {
                WeightSide::Pre => &run.pre,
                WeightSide::Backup => &run.backup,
            };
            for rec in &r.file_based.classification().unwrap().mismatches {
                let rel = rec.name.strip_prefix(&format!("{FIXTURE_PREFIX}/")).unwrap();
                assert_eq!(rec.s, tree[rel].len() as u64, "{side:?} {}", rec.name);
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn replay_flags_inconsistent_published_rows() {
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/published");
    let (code, text, err) = run_bin(&["replay", "--numbers", &format!("{data}/ios_file_based.json")]);
    assert_eq!(code, 0, "{err}");
    assert!(text.contains("| 14 | 39400 | 715 | 39401 |"));
    let (code, _, err) = run_bin(&["replay", "--numbers", &format!("{data}/android_content_based.json")]);
    assert_eq!(code, 2);
    assert!(err.contains("Settings Backup"), "{err}");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"title":"t","datasets":[{"dataset":"d","rows":[{"pre":5,"backup":3,"post":5,"e":9,"n_over":2,"n_new":0,"n_both":3,"v_eq":3,"p":[0,0,0,0],"r_w_mean":0,"r_w_std":0}]}]}"#,
    )
    .unwrap();
    let (code, text, _) = run_bin(&["replay", "--numbers", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(text.contains("|E| = |N_over| + |N_new| + |N_both|"), "{text}");
}
