//! Seeded file trees and their archive forms.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use flate2::write::ZlibEncoder;
use flate2::Compression;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::wal::gen_wal_fixture;

/// Relative path → file bytes.
pub type FileTree = BTreeMap<String, Vec<u8>>;

const WORDS: [&str; 24] = [
    "alpha", "backup", "cache", "delta", "entry", "frame", "group", "hash", "index", "journal", "key", "log", "media",
    "note", "offset", "page", "query", "record", "state", "token", "user", "value", "write", "zone",
];

const MAX_SIZE: usize = 64 * 1024;

fn text_bytes(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + 8);
    while out.len() < len {
        let w = WORDS[rng.random_range(0..WORDS.len())];
        out.extend_from_slice(w.as_bytes());
        out.push(if rng.random_bool(0.1) { b'\n' } else { b' ' });
    }
    out.truncate(len);
    out
}

fn binary_bytes(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    rng.fill(&mut out[..]);
    out
}

fn random_size(rng: &mut ChaCha8Rng) -> usize {
    // mostly small files, a few up to the cap
    match rng.random_range(0..10) {
        0 => 0,
        1 => rng.random_range(4096..=MAX_SIZE),
        _ => rng.random_range(1..4096),
    }
}

/// Random file content, text or binary.
pub(crate) fn random_content(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let len = random_size(rng);
    if rng.random_bool(0.5) {
        text_bytes(rng, len)
    } else {
        binary_bytes(rng, len)
    }
}

/// A tree of `n_files` files fully determined by `seed`. The first file is
/// a SQLite database; the second, for odd seeds, its `-wal` sidecar.
pub fn gen_base_snapshot(seed: u64, n_files: usize) -> FileTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tree = FileTree::new();
    if n_files == 0 {
        return tree;
    }
    let wal = gen_wal_fixture(seed);
    tree.insert("databases/store.db".into(), wal.db);
    if n_files >= 2 && seed % 2 == 1 {
        tree.insert("databases/store.db-wal".into(), wal.wal);
    }
    let mut i = 0usize;
    while tree.len() < n_files {
        let dir = rng.random_range(0..8);
        let ext = if rng.random_bool(0.5) { "txt" } else { "bin" };
        let name = format!("d{dir}/f{i:05}.{ext}");
        i += 1;
        let content = if ext == "txt" {
            let len = random_size(&mut rng);
            text_bytes(&mut rng, len)
        } else {
            random_content(&mut rng)
        };
        tree.insert(name, content);
    }
    tree
}

pub fn write_tree(tree: &FileTree, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for (rel, bytes) in tree {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, bytes)?;
    }
    Ok(())
}

/// A ustar archive holding the tree, members named `prefix` + path.
pub fn tree_to_tar(tree: &FileTree, prefix: &str) -> Vec<u8> {
    let mut builder = tar::Builder::new(Vec::new());
    for (rel, bytes) in tree {
        let mut header = tar::Header::new_gnu();
        header.set_size(bytes.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_entry_type(tar::EntryType::Regular);
        builder
            .append_data(&mut header, format!("{prefix}{rel}"), bytes.as_slice())
            .expect("in-memory tar write");
    }
    builder.into_inner().expect("in-memory tar write")
}

/// Wraps tar bytes in a version 5, compressed, unencrypted `.ab` container.
pub fn wrap_android_backup(tar: &[u8]) -> Vec<u8> {
    let mut enc = ZlibEncoder::new(b"ANDROID BACKUP\n5\n1\nnone\n".to_vec(), Compression::default());
    enc.write_all(tar).expect("in-memory write");
    enc.finish().expect("in-memory write")
}

/// The tar member prefix under which a package's files appear in an
/// Android backup.
pub fn android_files_prefix(package: &str) -> String {
    format!("apps/{package}/f/")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_deterministic() {
        assert!(gen_base_snapshot(1, 0).is_empty());
        let a = gen_base_snapshot(7, 30);
        assert_eq!(a.len(), 30);
        assert_eq!(a, gen_base_snapshot(7, 30));
        assert_ne!(a, gen_base_snapshot(8, 30));
        assert!(a.values().all(|v| v.len() <= MAX_SIZE));
        assert!(a.contains_key("databases/store.db-wal"));
        assert!(!gen_base_snapshot(8, 30).contains_key("databases/store.db-wal"));
    }
}
