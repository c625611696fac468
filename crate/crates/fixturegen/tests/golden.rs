//! Seeded output pinned byte for byte.

use std::fs;
use std::path::PathBuf;

use backupdiff_core::Digest;
use backupdiff_fixturegen::{gen_base_snapshot, gen_run, random_plan, tree_to_tar, wrap_android_backup, FileTree};

fn digest_list(tree: &FileTree) -> String {
    tree.iter()
        .map(|(name, bytes)| format!("{}  {name}\n", Digest::of(bytes).to_hex()))
        .collect()
}

#[test]
fn seed_42_base_tree_matches_recorded_manifest() {
    let tree = gen_base_snapshot(42, 100);
    assert_eq!(tree.len(), 100);
    let listing = digest_list(&tree);
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/seed42_n100.sha256");
    match fs::read_to_string(&path) {
        Ok(golden) => assert_eq!(listing, golden, "seed 42 tree drifted from {}", path.display()),
        Err(_) => {
            fs::write(&path, &listing).unwrap();
            eprintln!("recorded {}", path.display());
        }
    }
}

#[test]
fn regeneration_is_byte_identical() {
    for seed in [0, 1, 2, 42, u64::MAX] {
        assert_eq!(gen_base_snapshot(seed, 60), gen_base_snapshot(seed, 60));
        let plan = random_plan(seed, 120);
        let (a, b) = (gen_run(&plan).unwrap(), gen_run(&plan).unwrap());
        assert_eq!((&a.pre, &a.backup, &a.post), (&b.pre, &b.backup, &b.post));
        assert_eq!(a.expected, b.expected);
        let ab = |t: &FileTree| wrap_android_backup(&tree_to_tar(t, "apps/p/f/"));
        assert_eq!(ab(&a.backup), ab(&b.backup));
    }
}

#[test]
fn sizes_and_kinds() {
    let tree = gen_base_snapshot(9, 200);
    assert!(tree.values().all(|v| v.len() <= 64 * 1024));
    assert!(tree.values().any(|v| v.is_empty()));
    assert!(tree.keys().any(|n| n.ends_with(".txt")) && tree.keys().any(|n| n.ends_with(".bin")));
    assert!(tree["databases/store.db"].starts_with(b"SQLite format 3\0"));
}
