//! Synthetic Pre/Backup/Post triples with known classifications.
//!
//! Everything is determined by a seed, so a fixture can be regenerated
//! byte for byte instead of being stored.

pub mod content;
pub mod ios;
pub mod plan;
pub mod tree;
pub mod wal;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub use content::{gen_content_fixture, ContentCounts, ContentFixture};
pub use ios::{gen_ios_fixture, write_ios_backup, IosFixture, IosRow};
pub use plan::{
    gen_run, random_plan, validate_plan, Action, GeneratedRun, Mutation, MutationPlan, PlanError, Window,
    FIXTURE_PACKAGE, FIXTURE_PREFIX,
};
pub use tree::{gen_base_snapshot, tree_to_tar, wrap_android_backup, write_tree, FileTree};
pub use wal::{gen_wal_fixture, WalFixture};

pub fn load_plan(path: &Path) -> io::Result<MutationPlan> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Files written for one generated run.
#[derive(Debug, Clone)]
pub struct RunPaths {
    /// Reference tree; ingest with `device_prefix` = [`FIXTURE_PREFIX`].
    pub pre: PathBuf,
    pub backup_ab: PathBuf,
    pub post: PathBuf,
    pub expected: PathBuf,
}

/// Writes `pre/`, `backup.ab`, `post/` and `expected.json` under `dir`.
pub fn write_run(run: &GeneratedRun, dir: &Path) -> io::Result<RunPaths> {
    let paths = RunPaths {
        pre: dir.join("pre"),
        backup_ab: dir.join("backup.ab"),
        post: dir.join("post"),
        expected: dir.join("expected.json"),
    };
    write_tree(&run.pre, &paths.pre)?;
    write_tree(&run.post, &paths.post)?;
    let tar = tree_to_tar(&run.backup, &tree::android_files_prefix(FIXTURE_PACKAGE));
    fs::write(&paths.backup_ab, wrap_android_backup(&tar))?;
    let expected = serde_json::to_vec_pretty(&run.expected).map_err(io::Error::other)?;
    fs::write(&paths.expected, expected)?;
    Ok(paths)
}
