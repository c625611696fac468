//! Name and value classification of a (Pre, Backup, Post) triple.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{MismatchRecord, NameSets, PClass, RunClassification, Snapshot};

/// One evaluation iteration.
#[derive(Debug, Clone)]
pub struct RunInput {
    pub run_id: u32,
    pub pre: Snapshot,
    pub backup: Snapshot,
    pub post: Snapshot,
    /// Restricts all three snapshots to names under these prefixes.
    pub scope_filter: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NameClasses {
    pub e: BTreeSet<String>,
    pub n_over: BTreeSet<String>,
    pub n_new: BTreeSet<String>,
    pub n_both: BTreeSet<String>,
}

/// Splits `names(pre) ∪ names(backup)` by side of occurrence.
pub fn classify_names(pre: &Snapshot, backup: &Snapshot) -> NameClasses {
    let mut out = NameClasses::default();
    let mut a = pre.names().peekable();
    let mut b = backup.names().peekable();
    loop {
        let next = match (a.peek(), b.peek()) {
            (None, None) => break,
            (Some(x), None) => (x.to_string(), Ordering::Less),
            (None, Some(y)) => (y.to_string(), Ordering::Greater),
            (Some(x), Some(y)) => match x.cmp(y) {
                Ordering::Less => (x.to_string(), Ordering::Less),
                Ordering::Greater => (y.to_string(), Ordering::Greater),
                Ordering::Equal => (x.to_string(), Ordering::Equal),
            },
        };
        let (name, side) = next;
        // snapshots may repeat a name only if unvalidated; skip repeats
        match side {
            Ordering::Less => {
                while a.peek() == Some(&name.as_str()) {
                    a.next();
                }
                out.n_over.insert(name.clone());
            }
            Ordering::Greater => {
                while b.peek() == Some(&name.as_str()) {
                    b.next();
                }
                out.n_new.insert(name.clone());
            }
            Ordering::Equal => {
                while a.peek() == Some(&name.as_str()) {
                    a.next();
                }
                while b.peek() == Some(&name.as_str()) {
                    b.next();
                }
                out.n_both.insert(name.clone());
            }
        }
        out.e.insert(name);
    }
    out
}

/// Splits `n_both` by digest equality.
pub fn classify_values(
    pre: &Snapshot,
    backup: &Snapshot,
    n_both: &BTreeSet<String>,
) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut v_eq = BTreeSet::new();
    let mut v_ch = BTreeSet::new();
    for name in n_both {
        let same = match (pre.get(name), backup.get(name)) {
            (Some(p), Some(b)) => p.digest == b.digest,
            _ => false,
        };
        if same {
            v_eq.insert(name.clone());
        } else {
            v_ch.insert(name.clone());
        }
    }
    (v_eq, v_ch)
}

/// Attributes each changed name to a P-class. Records carry digests and
/// the class; similarity and weight are filled in later.
pub fn classify_mismatches(
    pre: &Snapshot,
    backup: &Snapshot,
    post: &Snapshot,
    v_ch: &BTreeSet<String>,
) -> Vec<MismatchRecord> {
    v_ch.iter()
        .filter_map(|name| {
            let p = pre.get(name)?;
            let b = backup.get(name)?;
            let post_digest = post.get(name).map(|e| e.digest);
            let p_class = match post_digest {
                None => PClass::Mis,
                Some(d) if d == b.digest => PClass::Mback,
                Some(d) if d == p.digest => PClass::Mpre,
                Some(_) => PClass::Nom,
            };
            Some(MismatchRecord {
                name: name.clone(),
                kind: p.kind,
                pre_digest: p.digest,
                backup_digest: b.digest,
                post_digest,
                r: None,
                s: 0,
                p_class,
                wal_explained: false,
            })
        })
        .collect()
}

/// All ten sets of a run. Similarity aggregates are left at zero.
pub fn classify_run(input: &RunInput) -> RunClassification {
    let scoped;
    let (pre, backup, post) = match &input.scope_filter {
        Some(prefixes) => {
            scoped = (
                input.pre.filter_prefixes(prefixes),
                input.backup.filter_prefixes(prefixes),
                input.post.filter_prefixes(prefixes),
            );
            (&scoped.0, &scoped.1, &scoped.2)
        }
        None => (&input.pre, &input.backup, &input.post),
    };
    let names = classify_names(pre, backup);
    let (v_eq, v_ch) = classify_values(pre, backup, &names.n_both);
    let mismatches = classify_mismatches(pre, backup, post, &v_ch);
    let mut sets = NameSets {
        e: names.e,
        n_over: names.n_over,
        n_new: names.n_new,
        n_both: names.n_both,
        v_eq,
        v_ch,
        ..Default::default()
    };
    for rec in &mismatches {
        sets.p_set_mut(rec.p_class).insert(rec.name.clone());
    }
    let n_new_in_post = sets.n_new.iter().filter(|n| post.contains(n)).cloned().collect();
    RunClassification {
        run_id: input.run_id,
        pre_count: pre.len(),
        backup_count: backup.len(),
        post_count: post.len(),
        sets,
        n_new_in_post,
        mismatches,
        r_w_mean: 0.0,
        r_w_std: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Identity {
    /// |E| = |N_over| + |N_new| + |N_both|
    E,
    /// |N_both| = |V_eq| + |V_ch|
    NBoth,
    /// |V_ch| = |P_mis| + |P_mback| + |P_mpre| + |P_nom|
    VCh,
    /// Set-level union and disjointness constraints.
    Partition,
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Identity::E => "|E| = |N_over| + |N_new| + |N_both|",
            Identity::NBoth => "|N_both| = |V_eq| + |V_ch|",
            Identity::VCh => "|V_ch| = |P_mis| + |P_mback| + |P_mpre| + |P_nom|",
            Identity::Partition => "set partition",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityViolation {
    pub identity: Identity,
    pub detail: String,
}

/// Cardinalities entering the three identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SetCounts {
    pub e: u64,
    pub n_over: u64,
    pub n_new: u64,
    pub n_both: u64,
    pub v_eq: u64,
    pub v_ch: u64,
    pub p_mis: u64,
    pub p_mback: u64,
    pub p_mpre: u64,
    pub p_nom: u64,
}

impl SetCounts {
    pub fn of(sets: &NameSets) -> Self {
        let n = |s: &BTreeSet<String>| s.len() as u64;
        SetCounts {
            e: n(&sets.e),
            n_over: n(&sets.n_over),
            n_new: n(&sets.n_new),
            n_both: n(&sets.n_both),
            v_eq: n(&sets.v_eq),
            v_ch: n(&sets.v_ch),
            p_mis: n(&sets.p_mis),
            p_mback: n(&sets.p_mback),
            p_mpre: n(&sets.p_mpre),
            p_nom: n(&sets.p_nom),
        }
    }
}

/// Checks the three cardinality identities; `slack[i]` is the largest
/// difference tolerated for identity `i` (0 for exact counts).
pub fn check_count_identities(c: &SetCounts, slack: [u64; 3]) -> Vec<IdentityViolation> {
    let mut out = Vec::new();
    let mut check = |identity: Identity, lhs: u64, rhs: u64, slack: u64, terms: String| {
        if lhs.abs_diff(rhs) > slack {
            out.push(IdentityViolation {
                identity,
                detail: format!("{lhs} != {terms} = {rhs}"),
            });
        }
    };
    check(
        Identity::E,
        c.e,
        c.n_over + c.n_new + c.n_both,
        slack[0],
        format!("{} + {} + {}", c.n_over, c.n_new, c.n_both),
    );
    check(Identity::NBoth, c.n_both, c.v_eq + c.v_ch, slack[1], format!("{} + {}", c.v_eq, c.v_ch));
    check(
        Identity::VCh,
        c.v_ch,
        c.p_mis + c.p_mback + c.p_mpre + c.p_nom,
        slack[2],
        format!("{} + {} + {} + {}", c.p_mis, c.p_mback, c.p_mpre, c.p_nom),
    );
    out
}

fn check_partition(
    out: &mut Vec<IdentityViolation>,
    whole_name: &str,
    whole: &BTreeSet<String>,
    parts: &[(&str, &BTreeSet<String>)],
) {
    for (i, (a_name, a)) in parts.iter().enumerate() {
        for (b_name, b) in &parts[i + 1..] {
            if let Some(n) = a.intersection(b).next() {
                out.push(IdentityViolation {
                    identity: Identity::Partition,
                    detail: format!("{a_name} and {b_name} share {n:?}"),
                });
            }
        }
        if let Some(n) = a.difference(whole).next() {
            out.push(IdentityViolation {
                identity: Identity::Partition,
                detail: format!("{n:?} is in {a_name} but not in {whole_name}"),
            });
        }
    }
    if let Some(n) = whole.iter().find(|n| !parts.iter().any(|(_, p)| p.contains(*n))) {
        out.push(IdentityViolation {
            identity: Identity::Partition,
            detail: format!("{n:?} is in {whole_name} but in none of its parts"),
        });
    }
}

/// Empty iff the cardinality identities and the set partitions hold.
pub fn check_cardinality_identities(rc: &RunClassification) -> Vec<IdentityViolation> {
    let s = &rc.sets;
    let mut out = check_count_identities(&SetCounts::of(s), [0; 3]);
    check_partition(&mut out, "e", &s.e, &[("n_over", &s.n_over), ("n_new", &s.n_new), ("n_both", &s.n_both)]);
    check_partition(&mut out, "n_both", &s.n_both, &[("v_eq", &s.v_eq), ("v_ch", &s.v_ch)]);
    check_partition(
        &mut out,
        "v_ch",
        &s.v_ch,
        &[("p_mis", &s.p_mis), ("p_mback", &s.p_mback), ("p_mpre", &s.p_mpre), ("p_nom", &s.p_nom)],
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Entry, EntryKind, Platform, SnapshotLabel};

    fn snap(label: SnapshotLabel, pairs: &[(&str, &str)]) -> Snapshot {
        let entries = pairs
            .iter()
            .map(|(n, v)| Entry::from_bytes(*n, EntryKind::FileBased, v.as_bytes().to_vec()))
            .collect();
        Snapshot::new(label, Platform::Generic, 1, entries)
    }

    fn set(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn name_classes() {
        let pre = snap(SnapshotLabel::Pre, &[("a", "1"), ("b", "1"), ("c", "1")]);
        let backup = snap(SnapshotLabel::Backup, &[("b", "1"), ("c", "1"), ("d", "1")]);
        let n = classify_names(&pre, &backup);
        assert_eq!(n.e, set(&["a", "b", "c", "d"]));
        assert_eq!(n.n_over, set(&["a"]));
        assert_eq!(n.n_new, set(&["d"]));
        assert_eq!(n.n_both, set(&["b", "c"]));
        let empty = snap(SnapshotLabel::Pre, &[]);
        assert_eq!(classify_names(&empty, &empty), NameClasses::default());
    }

    #[test]
    fn p_classes() {
        let pre = snap(SnapshotLabel::Pre, &[("back", "A"), ("mis", "A"), ("nom", "A"), ("pre", "A"), ("same", "A")]);
        let backup = snap(SnapshotLabel::Backup, &[("back", "B"), ("mis", "B"), ("nom", "B"), ("pre", "B"), ("same", "A")]);
        let post = snap(SnapshotLabel::Post, &[("back", "B"), ("nom", "C"), ("pre", "A"), ("same", "A")]);
        let rc = classify_run(&RunInput {
            run_id: 1,
            pre,
            backup,
            post,
            scope_filter: None,
        });
        assert_eq!(rc.sets.v_eq, set(&["same"]));
        assert_eq!(rc.sets.p_mback, set(&["back"]));
        assert_eq!(rc.sets.p_mis, set(&["mis"]));
        assert_eq!(rc.sets.p_mpre, set(&["pre"]));
        assert_eq!(rc.sets.p_nom, set(&["nom"]));
        assert!(rc.mismatches.iter().all(|m| (m.p_class == PClass::Mis) == m.post_digest.is_none()));
        assert!(check_cardinality_identities(&rc).is_empty());
    }

    #[test]
    fn identity_violation_is_named() {
        let mut rc = RunClassification::default();
        rc.sets.e.insert("x".into());
        let v = check_cardinality_identities(&rc);
        assert!(v.iter().any(|v| v.identity == Identity::E));
        let counts = SetCounts {
            e: 10,
            n_over: 4,
            n_new: 1,
            n_both: 5,
            v_eq: 5,
            ..Default::default()
        };
        assert!(check_count_identities(&counts, [0; 3]).is_empty());
        let off = SetCounts { e: 11, ..counts };
        assert_eq!(check_count_identities(&off, [0; 3])[0].identity, Identity::E);
        assert!(check_count_identities(&off, [1, 0, 0]).is_empty());
    }

    #[test]
    fn scope_filter_restricts_all_sides() {
        let pre = snap(SnapshotLabel::Pre, &[("/data/data/a/x", "1"), ("/data/data/b/y", "1")]);
        let backup = snap(SnapshotLabel::Backup, &[("/data/data/a/x", "1"), ("/data/data/b/y", "1")]);
        let post = pre.clone();
        let rc = classify_run(&RunInput {
            run_id: 1,
            pre,
            backup,
            post,
            scope_filter: Some(vec!["/data/data/a/".into()]),
        });
        assert_eq!(rc.sets.e, set(&["/data/data/a/x"]));
        assert!(rc.sets.n_new.is_empty());
    }
}
