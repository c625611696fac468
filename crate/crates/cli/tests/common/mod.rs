//! Fixture manifests shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use backupdiff_cli::{EvaluationManifest, RunSpec};
use backupdiff_core::ingest::{SourceFormat, SourceSpec};
use backupdiff_core::simdiff::WeightSide;
use backupdiff_core::Platform;
use backupdiff_fixturegen::tree::android_files_prefix;
use backupdiff_fixturegen::{
    gen_content_fixture, gen_run, random_plan, tree_to_tar, wrap_android_backup, write_tree, ContentCounts, FileTree,
    GeneratedRun, MutationPlan, FIXTURE_PACKAGE, FIXTURE_PREFIX,
};

pub const BIN: &str = env!("CARGO_BIN_EXE_backupdiff");

fn device_rel(rel: &str) -> String {
    format!("{}/{rel}", FIXTURE_PREFIX.trim_start_matches('/'))
}

/// Writes one run as a device root (`pre/`, `post/`) and a `backup.ab`,
/// optionally with SMS, call log and settings content beside the
/// fixture files.
pub fn write_device_run(run: &GeneratedRun, content: Option<(u64, ContentCounts)>, dir: &Path) -> RunSpec {
    let mut pre = FileTree::new();
    let mut post = FileTree::new();
    let mut members = FileTree::new();
    for (rel, bytes) in &run.pre {
        pre.insert(device_rel(rel), bytes.clone());
    }
    for (rel, bytes) in &run.post {
        post.insert(device_rel(rel), bytes.clone());
    }
    let prefix = android_files_prefix(FIXTURE_PACKAGE);
    for (rel, bytes) in &run.backup {
        members.insert(format!("{prefix}{rel}"), bytes.clone());
    }
    if let Some((seed, counts)) = content {
        let c = gen_content_fixture(seed, counts);
        for (k, v) in &c.reference {
            pre.insert(k.clone(), v.clone());
            post.insert(k.clone(), v.clone());
        }
        members.extend(c.backup_members);
    }
    write_tree(&pre, &dir.join("pre")).unwrap();
    write_tree(&post, &dir.join("post")).unwrap();
    fs::write(dir.join("backup.ab"), wrap_android_backup(&tree_to_tar(&members, ""))).unwrap();
    RunSpec {
        run_id: 0,
        pre: SourceSpec::new(SourceFormat::DirTree, dir.join("pre")),
        backup: SourceSpec::new(SourceFormat::AndroidAb, dir.join("backup.ab")),
        post: SourceSpec::new(SourceFormat::DirTree, dir.join("post")),
    }
}

pub fn manifest(label: &str, runs: Vec<RunSpec>, out: &Path) -> EvaluationManifest {
    EvaluationManifest {
        dataset_label: label.into(),
        section: None,
        platform: Platform::Android,
        runs: runs
            .into_iter()
            .enumerate()
            .map(|(i, r)| RunSpec {
                run_id: i as u32 + 1,
                ..r
            })
            .collect(),
        recipes_file: None,
        mapping_rules: None,
        weight_side: WeightSide::Pre,
        output_dir: out.to_path_buf(),
        scope: Vec::new(),
        overlap_row: false,
    }
}

/// Several random fixture runs, each with small content databases; the
/// manifest goes to `dir/manifest.json`.
pub fn mixed_manifest(dir: &Path, seeds: &[u64]) -> PathBuf {
    let counts = ContentCounts {
        sms: (40, 9),
        calls: (25, 6),
        settings: (60, 12),
    };
    let runs = seeds
        .iter()
        .map(|seed| {
            let run = gen_run(&random_plan(*seed, 120)).unwrap();
            write_device_run(&run, Some((*seed, counts)), &dir.join(format!("run{seed}")))
        })
        .collect();
    let mut m = manifest("Mixed fixture", runs, &dir.join("out"));
    m.recipes_file = Some("builtin".into());
    m.scope = vec![format!("{FIXTURE_PREFIX}/")];
    write_manifest(&m, &dir.join("manifest.json"))
}

pub fn write_manifest(m: &EvaluationManifest, path: &Path) -> PathBuf {
    fs::write(path, serde_json::to_string_pretty(m).unwrap()).unwrap();
    path.to_path_buf()
}

pub fn unchanged_plan(seed: u64, n_files: usize) -> MutationPlan {
    MutationPlan {
        seed,
        n_files,
        backup_inclusion_rate: 0.5,
        mutations: Vec::new(),
    }
}
