//! Fixture ground truth against the ingest + classify pipeline.

use std::collections::BTreeSet;

use backupdiff_core::classify::{check_cardinality_identities, classify_run, RunInput};
use backupdiff_core::contentx::{explain_db_mismatch, DbExplanation};
use backupdiff_core::ingest::{ingest, IngestContext, SourceFormat, SourceSpec};
use backupdiff_core::{Platform, RunClassification, SnapshotLabel};
use backupdiff_fixturegen::{
    gen_run, gen_wal_fixture, random_plan, write_run, Action, MutationPlan, Mutation, PlanError, Window,
    FIXTURE_PREFIX,
};

fn classify_from_disk(plan: &MutationPlan) -> (RunClassification, RunClassification) {
    let run = gen_run(plan).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_run(&run, dir.path()).unwrap();
    let side = |label, format, path: &std::path::Path| {
        let spec = SourceSpec::new(format, path).with_option("device_prefix", FIXTURE_PREFIX);
        let out = ingest(&spec, &IngestContext::new(label, Platform::Android, 1)).unwrap();
        assert!(out.report.unmapped.is_empty(), "{:?}", out.report.unmapped);
        out.snapshot
    };
    let input = RunInput {
        run_id: 1,
        pre: side(SnapshotLabel::Pre, SourceFormat::DirTree, &paths.pre),
        backup: side(SnapshotLabel::Backup, SourceFormat::AndroidAb, &paths.backup_ab),
        post: side(SnapshotLabel::Post, SourceFormat::DirTree, &paths.post),
        scope_filter: None,
    };
    (classify_run(&input), run.expected)
}

fn assert_same_sets(got: &RunClassification, want: &RunClassification) {
    for ((name, g), (_, w)) in got.sets.named().into_iter().zip(want.sets.named()) {
        assert_eq!(g, w, "set {name}");
    }
    assert_eq!(got.n_new_in_post, want.n_new_in_post);
    assert_eq!(
        (got.pre_count, got.backup_count, got.post_count),
        (want.pre_count, want.backup_count, want.post_count)
    );
}

fn plan(mutations: Vec<Mutation>, rate: f64) -> MutationPlan {
    MutationPlan {
        seed: 3,
        n_files: 12,
        backup_inclusion_rate: rate,
        mutations,
    }
}

fn m(target: &str, window: Window, action: Action) -> Mutation {
    Mutation {
        target_name: target.into(),
        window,
        action,
    }
}

#[test]
fn empty_plan_full_inclusion() {
    let (got, want) = classify_from_disk(&plan(vec![], 1.0));
    assert!(want.sets.v_ch.is_empty() && want.sets.n_over.is_empty());
    assert_eq!(want.sets.v_eq.len(), 12);
    assert_same_sets(&got, &want);
}

#[test]
fn single_during_backup_rewrite_is_mpre() {
    let (got, want) = classify_from_disk(&plan(vec![m("databases/store.db", Window::DuringBackup, Action::Rewrite)], 1.0));
    let target = format!("{FIXTURE_PREFIX}/databases/store.db");
    assert_eq!(want.sets.p_mpre, BTreeSet::from([target]));
    assert_same_sets(&got, &want);
}

#[test]
fn contradictory_plans_are_rejected() {
    let bad = [
        plan(vec![m("databases/store.db", Window::AfterBackup, Action::Create)], 1.0),
        plan(vec![m("nope", Window::BeforeBackup, Action::Rewrite)], 1.0),
        plan(
            vec![
                m("databases/store.db", Window::BeforeBackup, Action::Delete),
                m("databases/store.db", Window::BeforeBackup, Action::Rewrite),
            ],
            1.0,
        ),
        plan(vec![m("databases/store.db", Window::DuringBackup, Action::Rewrite)], 0.0),
    ];
    for p in bad {
        assert!(matches!(gen_run(&p), Err(PlanError::InvalidPlan { .. })), "{p:?}");
    }
    assert!(matches!(gen_run(&plan(vec![], 1.5)), Err(PlanError::InclusionRate(_))));
}

#[test]
fn random_plans_through_the_pipeline() {
    for seed in 1..=40 {
        let p = random_plan(seed, 200);
        let (got, want) = classify_from_disk(&p);
        assert_same_sets(&got, &want);
        assert!(check_cardinality_identities(&got).is_empty());
    }
}

#[test]
fn every_evaluated_name_has_one_class() {
    for seed in 1..=60 {
        let run = gen_run(&random_plan(seed, 200)).unwrap();
        let s = &run.expected.sets;
        let leaves = [&s.n_over, &s.n_new, &s.v_eq, &s.p_mis, &s.p_mback, &s.p_mpre, &s.p_nom];
        let names: BTreeSet<String> = run
            .pre
            .keys()
            .chain(run.backup.keys())
            .map(|k| format!("{FIXTURE_PREFIX}/{k}"))
            .collect();
        assert_eq!(&names, &s.e);
        for n in &names {
            assert_eq!(leaves.iter().filter(|set| set.contains(n)).count(), 1, "seed {seed}: {n}");
        }
    }
}

#[test]
fn wal_fixture_triples() {
    for seed in 0..8 {
        let fx = gen_wal_fixture(seed);
        assert_eq!(explain_db_mismatch(&fx.db, Some(&fx.wal), &fx.checkpointed), DbExplanation::WalExplained);
        assert_eq!(explain_db_mismatch(&fx.db, Some(&[]), &fx.db), DbExplanation::LogicallyEqual);
        assert!(matches!(
            explain_db_mismatch(&fx.db, Some(&fx.wal), &fx.planted),
            DbExplanation::Different { .. }
        ));
    }
}
