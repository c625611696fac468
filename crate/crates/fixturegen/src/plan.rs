//! Mutation plans around a simulated backup and their expected
//! classification.
//!
//! The backup is an instantaneous copy of the in-scope files. A mutation
//! happens in one of three windows:
//!
//! * `BeforeBackup`: after Pre was taken; the live file changes and the
//!   backup copies the changed file.
//! * `DuringBackup`: only the copy is affected (a transient value, a file
//!   missed or picked up by the copy); the live file is left as it was.
//! * `AfterBackup`: the live file changes before Post is taken.

use std::collections::{BTreeMap, BTreeSet};

use backupdiff_core::{
    Entry, EntryKind, NameSets, PClass, Platform, RunClassification, Snapshot, SnapshotLabel,
};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{gen_base_snapshot, random_content, FileTree};

/// Device directory the fixture files live under.
pub const FIXTURE_PACKAGE: &str = "org.backupdiff.fixture";
pub const FIXTURE_PREFIX: &str = "/data/data/org.backupdiff.fixture/files";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Window {
    BeforeBackup,
    DuringBackup,
    AfterBackup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Rewrite,
    Delete,
    Create,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutation {
    pub target_name: String,
    pub window: Window,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationPlan {
    pub seed: u64,
    pub n_files: usize,
    pub backup_inclusion_rate: f64,
    #[serde(default)]
    pub mutations: Vec<Mutation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("invalid plan: {target}: {reason}")]
    InvalidPlan { target: String, reason: String },
    #[error("invalid plan: backup inclusion rate {0} is outside [0, 1]")]
    InclusionRate(String),
}

/// Mutations of one target, at most one per window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Signature {
    before: Option<Action>,
    during: Option<Action>,
    after: Option<Action>,
}

fn invalid(target: &str, reason: &str) -> PlanError {
    PlanError::InvalidPlan {
        target: target.to_string(),
        reason: reason.to_string(),
    }
}

/// Checks one target's mutations against the file's existence at each
/// point of the timeline.
fn check_signature(target: &str, sig: Signature, in_base: bool, included: bool) -> Result<(), PlanError> {
    let step = |exists: bool, action: Option<Action>, window: &str| -> Result<bool, PlanError> {
        match action {
            None => Ok(exists),
            Some(Action::Rewrite) if !exists => Err(invalid(target, &format!("{window} rewrite of a missing file"))),
            Some(Action::Delete) if !exists => Err(invalid(target, &format!("{window} delete of a missing file"))),
            Some(Action::Create) if exists => Err(invalid(target, &format!("{window} create of an existing file"))),
            Some(Action::Rewrite) => Ok(true),
            Some(Action::Delete) => Ok(false),
            Some(Action::Create) => Ok(true),
        }
    };
    let live = step(in_base, sig.before, "BeforeBackup")?;
    let in_scope = (in_base && included) || sig.before == Some(Action::Create);
    if sig.during.is_some() && !in_scope && sig.during != Some(Action::Create) {
        return Err(invalid(target, "DuringBackup change to a file the backup does not copy"));
    }
    step(live, sig.during, "DuringBackup")?;
    step(live, sig.after, "AfterBackup")?;
    Ok(())
}

/// Where a name ends up, derived from its mutations alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expected {
    /// Not in Pre or Backup.
    Outside,
    NOver,
    NNew,
    VEq,
    VCh(PClass),
}

fn expected_of(sig: Signature, in_base: bool, included: bool) -> (Expected, bool) {
    use Action::*;
    let live_after_before = match sig.before {
        None => in_base,
        Some(Rewrite) | Some(Create) => true,
        Some(Delete) => false,
    };
    let in_scope = (in_base && included) || sig.before == Some(Create);
    let in_backup = match sig.during {
        Some(Create) | Some(Rewrite) => true,
        Some(Delete) => false,
        None => live_after_before && in_scope,
    };
    let in_post = match sig.after {
        Some(Rewrite) | Some(Create) => true,
        Some(Delete) => false,
        None => live_after_before,
    };
    let class = match (in_base, in_backup) {
        (false, false) => Expected::Outside,
        (true, false) => Expected::NOver,
        (false, true) => Expected::NNew,
        (true, true) => {
            let changed = sig.before == Some(Rewrite)
                || sig.during == Some(Rewrite)
                || (sig.before == Some(Delete) && sig.during == Some(Create));
            if !changed {
                Expected::VEq
            } else if !in_post {
                Expected::VCh(PClass::Mis)
            } else if sig.after.is_some() {
                Expected::VCh(PClass::Nom)
            } else {
                match (sig.before, sig.during) {
                    (Some(Rewrite), None) => Expected::VCh(PClass::Mback),
                    (None, Some(Rewrite)) => Expected::VCh(PClass::Mpre),
                    _ => Expected::VCh(PClass::Nom),
                }
            }
        }
    };
    (class, in_post)
}

/// Materialized run and its ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedRun {
    pub pre: FileTree,
    pub backup: FileTree,
    pub post: FileTree,
    /// Expected sets, names prefixed with [`FIXTURE_PREFIX`].
    pub expected: RunClassification,
}

pub fn device_name(rel: &str) -> String {
    format!("{FIXTURE_PREFIX}/{rel}")
}

/// In-memory snapshot of a fixture tree under [`FIXTURE_PREFIX`].
pub fn tree_snapshot(tree: &FileTree, label: SnapshotLabel, run_id: u32) -> Snapshot {
    let entries = tree
        .iter()
        .map(|(rel, bytes)| Entry::from_bytes(device_name(rel), EntryKind::FileBased, bytes.clone()))
        .collect();
    Snapshot::new(label, Platform::Android, run_id, entries)
}

impl GeneratedRun {
    pub fn snapshots(&self, run_id: u32) -> (Snapshot, Snapshot, Snapshot) {
        (
            tree_snapshot(&self.pre, SnapshotLabel::Pre, run_id),
            tree_snapshot(&self.backup, SnapshotLabel::Backup, run_id),
            tree_snapshot(&self.post, SnapshotLabel::Post, run_id),
        )
    }
}

/// Base files the backup copies.
pub fn included_files(plan: &MutationPlan, base: &FileTree) -> BTreeSet<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed.wrapping_add(0x1_0000_0001));
    base.keys()
        .filter(|_| rng.random_bool(plan.backup_inclusion_rate))
        .cloned()
        .collect()
}

fn mutated(original: Option<&[u8]>, window: Window, action: Action, rng: &mut ChaCha8Rng) -> Vec<u8> {
    // the tag keeps every mutated value distinct from all others
    let mut out = format!("backupdiff-mutation {window:?} {action:?}\n").into_bytes();
    match original {
        Some(bytes) if !bytes.is_empty() => {
            let mut body = bytes.to_vec();
            for _ in 0..rng.random_range(1..=8) {
                let i = rng.random_range(0..body.len());
                body[i] = rng.random();
            }
            out.extend(body);
        }
        _ => out.extend(random_content(rng)),
    }
    out
}

pub fn validate_plan(plan: &MutationPlan) -> Result<(), PlanError> {
    if !(0.0..=1.0).contains(&plan.backup_inclusion_rate) {
        return Err(PlanError::InclusionRate(plan.backup_inclusion_rate.to_string()));
    }
    let base = gen_base_snapshot(plan.seed, plan.n_files);
    let included = included_files(plan, &base);
    signatures(plan, &base, &included).map(|_| ())
}

fn signatures(
    plan: &MutationPlan,
    base: &FileTree,
    included: &BTreeSet<String>,
) -> Result<BTreeMap<String, Signature>, PlanError> {
    let mut sigs: BTreeMap<String, Signature> = BTreeMap::new();
    for m in &plan.mutations {
        let sig = sigs.entry(m.target_name.clone()).or_default();
        let slot = match m.window {
            Window::BeforeBackup => &mut sig.before,
            Window::DuringBackup => &mut sig.during,
            Window::AfterBackup => &mut sig.after,
        };
        if slot.is_some() {
            return Err(invalid(&m.target_name, &format!("two mutations in the {:?} window", m.window)));
        }
        *slot = Some(m.action);
    }
    for (target, sig) in &sigs {
        check_signature(target, *sig, base.contains_key(target), included.contains(target))?;
    }
    Ok(sigs)
}

/// Builds Pre, Backup and Post and the classification they must produce.
pub fn gen_run(plan: &MutationPlan) -> Result<GeneratedRun, PlanError> {
    if !(0.0..=1.0).contains(&plan.backup_inclusion_rate) {
        return Err(PlanError::InclusionRate(plan.backup_inclusion_rate.to_string()));
    }
    let base = gen_base_snapshot(plan.seed, plan.n_files);
    let included = included_files(plan, &base);
    let sigs = signatures(plan, &base, &included)?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed.wrapping_add(0x2_0000_0002));

    let pre = base.clone();
    let mut live = base.clone();
    let mut scope = included.clone();
    for (target, sig) in &sigs {
        match sig.before {
            Some(Action::Rewrite) => {
                let v = mutated(live.get(target).map(Vec::as_slice), Window::BeforeBackup, Action::Rewrite, &mut rng);
                live.insert(target.clone(), v);
            }
            Some(Action::Create) => {
                let v = mutated(None, Window::BeforeBackup, Action::Create, &mut rng);
                live.insert(target.clone(), v);
                scope.insert(target.clone());
            }
            Some(Action::Delete) => {
                live.remove(target);
            }
            None => {}
        }
    }
    let mut backup: FileTree = live
        .iter()
        .filter(|(name, _)| scope.contains(*name))
        .map(|(n, v)| (n.clone(), v.clone()))
        .collect();
    for (target, sig) in &sigs {
        match sig.during {
            Some(action @ (Action::Rewrite | Action::Create)) => {
                let v = mutated(live.get(target).map(Vec::as_slice), Window::DuringBackup, action, &mut rng);
                backup.insert(target.clone(), v);
            }
            Some(Action::Delete) => {
                backup.remove(target);
            }
            None => {}
        }
    }
    let mut post = live;
    for (target, sig) in &sigs {
        match sig.after {
            Some(action @ (Action::Rewrite | Action::Create)) => {
                let v = mutated(post.get(target).map(Vec::as_slice), Window::AfterBackup, action, &mut rng);
                post.insert(target.clone(), v);
            }
            Some(Action::Delete) => {
                post.remove(target);
            }
            None => {}
        }
    }

    let mut sets = NameSets::default();
    let mut n_new_in_post = BTreeSet::new();
    let names: BTreeSet<&String> = base.keys().chain(sigs.keys()).collect();
    for rel in names {
        let sig = sigs.get(rel).copied().unwrap_or_default();
        let (class, in_post) = expected_of(sig, base.contains_key(rel), included.contains(rel));
        let name = device_name(rel);
        if class != Expected::Outside {
            sets.e.insert(name.clone());
        }
        match class {
            Expected::Outside => {}
            Expected::NOver => {
                sets.n_over.insert(name);
            }
            Expected::NNew => {
                if in_post {
                    n_new_in_post.insert(name.clone());
                }
                sets.n_new.insert(name);
            }
            Expected::VEq => {
                sets.n_both.insert(name.clone());
                sets.v_eq.insert(name);
            }
            Expected::VCh(p) => {
                sets.n_both.insert(name.clone());
                sets.v_ch.insert(name.clone());
                sets.p_set_mut(p).insert(name);
            }
        }
    }
    let expected = RunClassification {
        run_id: 0,
        pre_count: pre.len(),
        backup_count: backup.len(),
        post_count: post.len(),
        sets,
        n_new_in_post,
        ..Default::default()
    };
    Ok(GeneratedRun {
        pre,
        backup,
        post,
        expected,
    })
}

const ACTIONS: [Option<Action>; 4] = [None, Some(Action::Rewrite), Some(Action::Delete), Some(Action::Create)];

/// A random valid plan with at most `max_entries` names per snapshot.
pub fn random_plan(seed: u64, max_entries: usize) -> MutationPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let max_new = max_entries / 4;
    let n_files = rng.random_range(0..=max_entries - max_new);
    let mut plan = MutationPlan {
        seed,
        n_files,
        backup_inclusion_rate: [0.0, 0.3, 0.7, 1.0][rng.random_range(0..4)],
        mutations: Vec::new(),
    };
    let base = gen_base_snapshot(seed, n_files);
    let included = included_files(&plan, &base);
    let names: Vec<&String> = base.keys().collect();
    let mut targets: BTreeSet<String> = BTreeSet::new();
    for _ in 0..rng.random_range(0..=names.len().min(40)) {
        targets.insert(names[rng.random_range(0..names.len())].clone());
    }
    for i in 0..rng.random_range(0..=max_new) {
        targets.insert(format!("new/n{i:03}.bin"));
    }
    for target in targets {
        let in_base = base.contains_key(&target);
        // rejection sampling over the 64 signatures
        for _ in 0..32 {
            let sig = Signature {
                before: ACTIONS[rng.random_range(0..4)],
                during: ACTIONS[rng.random_range(0..4)],
                after: ACTIONS[rng.random_range(0..4)],
            };
            if sig == Signature::default()
                || check_signature(&target, sig, in_base, included.contains(&target)).is_err()
            {
                continue;
            }
            for (window, action) in [
                (Window::BeforeBackup, sig.before),
                (Window::DuringBackup, sig.during),
                (Window::AfterBackup, sig.after),
            ] {
                if let Some(action) = action {
                    plan.mutations.push(Mutation {
                        target_name: target.clone(),
                        window,
                        action,
                    });
                }
            }
            break;
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(mutations: Vec<(&str, Window, Action)>, rate: f64) -> MutationPlan {
        MutationPlan {
            seed: 11,
            n_files: 12,
            backup_inclusion_rate: rate,
            mutations: mutations
                .into_iter()
                .map(|(t, window, action)| Mutation {
                    target_name: t.to_string(),
                    window,
                    action,
                })
                .collect(),
        }
    }

    fn some_file() -> String {
        gen_base_snapshot(11, 12).keys().nth(3).unwrap().clone()
    }

    #[test]
    fn empty_plan_full_inclusion() {
        let run = gen_run(&plan(vec![], 1.0)).unwrap();
        assert!(run.expected.sets.v_ch.is_empty());
        assert!(run.expected.sets.n_over.is_empty());
        assert_eq!(run.expected.sets.v_eq.len(), 12);
    }

    #[test]
    fn windows_map_to_classes() {
        let t = some_file();
        let cases = [
            (vec![(t.as_str(), Window::DuringBackup, Action::Rewrite)], PClass::Mpre),
            (vec![(t.as_str(), Window::BeforeBackup, Action::Rewrite)], PClass::Mback),
            (
                vec![(t.as_str(), Window::BeforeBackup, Action::Rewrite), (t.as_str(), Window::AfterBackup, Action::Rewrite)],
                PClass::Nom,
            ),
            (
                vec![(t.as_str(), Window::BeforeBackup, Action::Rewrite), (t.as_str(), Window::AfterBackup, Action::Delete)],
                PClass::Mis,
            ),
        ];
        for (muts, class) in cases {
            let run = gen_run(&plan(muts, 1.0)).unwrap();
            let want: BTreeSet<String> = [device_name(&t)].into();
            assert_eq!(run.expected.sets.p_set(class), &want, "{class:?}");
            assert_eq!(run.expected.sets.v_ch.len(), 1);
        }
    }

    #[test]
    fn creates_and_exclusion() {
        let run = gen_run(&plan(vec![("new/x", Window::DuringBackup, Action::Create)], 0.0)).unwrap();
        assert_eq!(run.expected.sets.n_new.len(), 1);
        assert_eq!(run.expected.sets.n_over.len(), 12);
        assert!(run.expected.n_new_in_post.is_empty());
    }

    #[test]
    fn contradictions_are_rejected() {
        let t = some_file();
        let bad = [
            vec![(t.as_str(), Window::BeforeBackup, Action::Create)],
            vec![("nope", Window::AfterBackup, Action::Rewrite)],
            vec![(t.as_str(), Window::BeforeBackup, Action::Delete), (t.as_str(), Window::AfterBackup, Action::Rewrite)],
            vec![(t.as_str(), Window::AfterBackup, Action::Rewrite), (t.as_str(), Window::AfterBackup, Action::Delete)],
        ];
        for muts in bad {
            assert!(matches!(gen_run(&plan(muts, 1.0)), Err(PlanError::InvalidPlan { .. })));
        }
        let excluded = plan(vec![(t.as_str(), Window::DuringBackup, Action::Rewrite)], 0.0);
        assert!(matches!(gen_run(&excluded), Err(PlanError::InvalidPlan { .. })));
        assert!(matches!(gen_run(&plan(vec![], 1.5)), Err(PlanError::InclusionRate(_))));
    }

    #[test]
    fn random_plans_are_valid() {
        for seed in 1..40 {
            let p = random_plan(seed, 200);
            validate_plan(&p).unwrap();
            let run = gen_run(&p).unwrap();
            assert!(run.pre.len() <= 200 && run.backup.len() <= 200 && run.post.len() <= 200);
        }
    }
}
