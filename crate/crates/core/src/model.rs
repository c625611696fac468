//! Name-value pairs, snapshots and the on-disk snapshot layout.
//!
//! A [`Snapshot`] holds every [`Entry`] captured at one acquisition point
//! (Pre, Backup or Post). Values are never compared byte-by-byte during
//! classification; each entry carries a SHA-256 digest and a [`ValueRef`]
//! that loads the bytes on demand.
//!
//! On disk a snapshot is a directory:
//!
//! ```text
//! snapshot.json        label, platform, run id, digest algorithm
//! manifest.jsonl       {name, kind, size, digest, blob} per entry
//! ab/ab12...           content-addressed blobs
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Name of the digest algorithm recorded in every snapshot directory.
pub const DIGEST_ALGORITHM: &str = "sha256";

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SNAPSHOT_META_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("value of entry {entry:?} is unreadable: {source}")]
    IoFailure {
        entry: String,
        #[source]
        source: io::Error,
    },
    #[error("value of entry {entry:?} does not match its digest (expected {expected}, got {actual})")]
    DigestMismatch {
        entry: String,
        expected: Digest,
        actual: Digest,
    },
    #[error("manifest {path} line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("snapshot uses digest algorithm {0:?}, this build only understands {DIGEST_ALGORITHM}")]
    UnsupportedDigest(String),
    #[error("invalid digest string {0:?}")]
    BadDigest(String),
}

/// SHA-256 digest of a value.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    /// Hashes everything readable from `reader`, returning the digest and
    /// the number of bytes consumed.
    pub fn of_reader<R: Read>(mut reader: R) -> io::Result<(Self, u64)> {
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 64 * 1024];
        let mut n = 0u64;
        loop {
            let got = match reader.read(&mut buf) {
                Ok(0) => break,
                Ok(got) => got,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            };
            hasher.update(&buf[..got]);
            n += got as u64;
        }
        Ok((Digest(hasher.finalize().into()), n))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Relative blob path inside a snapshot directory.
    pub fn blob_path(&self) -> String {
        let hex = self.to_hex();
        format!("{}/{}", &hex[..2], hex)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl FromStr for Digest {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| ModelError::BadDigest(s.to_string()))?;
        Ok(Digest(out))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryKind {
    FileBased,
    ContentBased,
}

/// Where the bytes of a value live.
#[derive(Clone)]
pub enum ValueRef {
    Inline(Arc<[u8]>),
    File(PathBuf),
}

impl ValueRef {
    pub fn load(&self) -> io::Result<Vec<u8>> {
        match self {
            ValueRef::Inline(bytes) => Ok(bytes.to_vec()),
            ValueRef::File(path) => fs::read(path),
        }
    }
}

impl fmt::Debug for ValueRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueRef::Inline(bytes) => write!(f, "Inline({} bytes)", bytes.len()),
            ValueRef::File(path) => write!(f, "File({})", path.display()),
        }
    }
}

/// One name-value pair.
#[derive(Debug, Clone)]
pub struct Entry {
    pub name: String,
    pub kind: EntryKind,
    pub size: u64,
    pub digest: Digest,
    pub value: ValueRef,
}

impl Entry {
    pub fn from_bytes(name: impl Into<String>, kind: EntryKind, bytes: Vec<u8>) -> Self {
        Entry {
            name: name.into(),
            kind,
            size: bytes.len() as u64,
            digest: Digest::of(&bytes),
            value: ValueRef::Inline(bytes.into()),
        }
    }

    /// Loads the value and checks it against the recorded digest.
    pub fn load(&self) -> Result<Vec<u8>, ModelError> {
        let bytes = self.value.load().map_err(|source| ModelError::IoFailure {
            entry: self.name.clone(),
            source,
        })?;
        let actual = Digest::of(&bytes);
        if actual != self.digest {
            return Err(ModelError::DigestMismatch {
                entry: self.name.clone(),
                expected: self.digest,
                actual,
            });
        }
        Ok(bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotLabel {
    Pre,
    Backup,
    Post,
}

impl fmt::Display for SnapshotLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SnapshotLabel::Pre => "pre",
            SnapshotLabel::Backup => "backup",
            SnapshotLabel::Post => "post",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Android,
    Ios,
    #[default]
    Generic,
}

/// All entries observed at one acquisition point.
///
/// Entries are kept sorted by name. Construction does not reject duplicate
/// names so that [`validate_snapshot`] can report them; lookups on a
/// snapshot with duplicates return the last occurrence.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub label: SnapshotLabel,
    pub platform: Platform,
    pub run_id: u32,
    pub captured_at: DateTime<Utc>,
    entries: Vec<Entry>,
}

impl Snapshot {
    pub fn new(label: SnapshotLabel, platform: Platform, run_id: u32, mut entries: Vec<Entry>) -> Self {
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        Snapshot {
            label,
            platform,
            run_id,
            captured_at: DateTime::<Utc>::UNIX_EPOCH,
            entries,
        }
    }

    pub fn with_captured_at(mut self, at: DateTime<Utc>) -> Self {
        self.captured_at = at;
        self
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        let end = self.entries.partition_point(|e| e.name.as_str() <= name);
        if end == 0 {
            return None;
        }
        let candidate = &self.entries[end - 1];
        (candidate.name == name).then_some(candidate)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Keeps only entries whose name starts with one of `prefixes`.
    pub fn filter_prefixes(&self, prefixes: &[String]) -> Snapshot {
        let entries = self
            .entries
            .iter()
            .filter(|e| prefixes.iter().any(|p| e.name.starts_with(p.as_str())))
            .cloned()
            .collect();
        Snapshot {
            entries,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Snapshot {
        Snapshot {
            label: self.label,
            platform: self.platform,
            run_id: self.run_id,
            captured_at: self.captured_at,
            entries: Vec::new(),
        }
    }

    /// Writes `snapshot.json`, `manifest.jsonl` and one blob per distinct
    /// digest into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), ModelError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ModelError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;

        let meta = SnapshotMeta {
            label: self.label,
            platform: self.platform,
            run_id: self.run_id,
            captured_at: self.captured_at,
            digest_algorithm: DIGEST_ALGORITHM.to_string(),
            entries: self.entries.len(),
        };
        let meta_path = dir.join(SNAPSHOT_META_FILE);
        let json = serde_json::to_vec_pretty(&meta).expect("snapshot metadata serializes");
        fs::write(&meta_path, json).map_err(io_err(&meta_path))?;

        let manifest_path = dir.join(MANIFEST_FILE);
        let file = File::create(&manifest_path).map_err(io_err(&manifest_path))?;
        let mut out = BufWriter::new(file);
        for entry in &self.entries {
            let blob = entry.digest.blob_path();
            let blob_path = dir.join(&blob);
            if !blob_path.exists() {
                let bytes = entry.load()?;
                if let Some(parent) = blob_path.parent() {
                    fs::create_dir_all(parent).map_err(io_err(parent))?;
                }
                fs::write(&blob_path, bytes).map_err(io_err(&blob_path))?;
            }
            let record = ManifestRecord {
                name: entry.name.clone(),
                kind: entry.kind,
                size: entry.size,
                digest: entry.digest,
                blob,
            };
            serde_json::to_writer(&mut out, &record).expect("manifest record serializes");
            out.write_all(b"\n").map_err(io_err(&manifest_path))?;
        }
        out.flush().map_err(io_err(&manifest_path))?;
        Ok(())
    }

    /// Loads a snapshot directory written by [`Snapshot::write_dir`].
    ///
    /// Duplicate manifest records are preserved so that validation can
    /// report them.
    pub fn load_dir(dir: &Path) -> Result<Snapshot, ModelError> {
        let meta_path = dir.join(SNAPSHOT_META_FILE);
        let meta_bytes = fs::read(&meta_path).map_err(|source| ModelError::Io {
            path: meta_path.clone(),
            source,
        })?;
        let meta: SnapshotMeta = serde_json::from_slice(&meta_bytes).map_err(|e| ModelError::Manifest {
            path: meta_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if meta.digest_algorithm != DIGEST_ALGORITHM {
            return Err(ModelError::UnsupportedDigest(meta.digest_algorithm));
        }

        let manifest_path = dir.join(MANIFEST_FILE);
        let file = File::open(&manifest_path).map_err(|source| ModelError::Io {
            path: manifest_path.clone(),
            source,
        })?;
        let mut entries = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| ModelError::Io {
                path: manifest_path.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ManifestRecord = serde_json::from_str(&line).map_err(|e| ModelError::Manifest {
                path: manifest_path.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            entries.push(Entry {
                name: record.name,
                kind: record.kind,
                size: record.size,
                digest: record.digest,
                value: ValueRef::File(dir.join(record.blob)),
            });
        }
        Ok(Snapshot::new(meta.label, meta.platform, meta.run_id, entries).with_captured_at(meta.captured_at))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotMeta {
    label: SnapshotLabel,
    platform: Platform,
    run_id: u32,
    captured_at: DateTime<Utc>,
    digest_algorithm: String,
    entries: usize,
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub name: String,
    pub kind: EntryKind,
    pub size: u64,
    pub digest: Digest,
    pub blob: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "kebab-case")]
pub enum Violation {
    EmptyName,
    DuplicateName { name: String },
    DigestMismatch { name: String, expected: Digest, actual: Digest },
    SizeMismatch { name: String, declared: u64, actual: u64 },
}

/// Checks every entry and snapshot invariant, loading each value once.
///
/// Returns an empty list when the snapshot is well formed. An unreadable
/// value aborts validation with [`ModelError::IoFailure`].
pub fn validate_snapshot(snapshot: &Snapshot) -> Result<Vec<Violation>, ModelError> {
    let mut violations = Vec::new();
    let entries = snapshot.entries();
    for (idx, entry) in entries.iter().enumerate() {
        if entry.name.is_empty() {
            violations.push(Violation::EmptyName);
        }
        if idx > 0 && entries[idx - 1].name == entry.name {
            violations.push(Violation::DuplicateName { name: entry.name.clone() });
        }
        let bytes = entry.value.load().map_err(|source| ModelError::IoFailure {
            entry: entry.name.clone(),
            source,
        })?;
        let actual = Digest::of(&bytes);
        if actual != entry.digest {
            violations.push(Violation::DigestMismatch {
                name: entry.name.clone(),
                expected: entry.digest,
                actual,
            });
        }
        if bytes.len() as u64 != entry.size {
            violations.push(Violation::SizeMismatch {
                name: entry.name.clone(),
                declared: entry.size,
                actual: bytes.len() as u64,
            });
        }
    }
    Ok(violations)
}

/// Cause attributed to a changed value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PClass {
    /// Name absent from Post.
    Mis,
    /// Backup equals Post: changed before the backup.
    Mback,
    /// Pre equals Post: the backed up value differs from both.
    Mpre,
    /// Pre, Backup and Post all differ.
    Nom,
}

impl PClass {
    pub const ALL: [PClass; 4] = [PClass::Mis, PClass::Mback, PClass::Mpre, PClass::Nom];

    pub fn column(self) -> &'static str {
        match self {
            PClass::Mis => "p_mis",
            PClass::Mback => "p_mback",
            PClass::Mpre => "p_mpre",
            PClass::Nom => "p_nom",
        }
    }
}

/// Change evidence for one name of `V_ch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchRecord {
    pub name: String,
    pub kind: EntryKind,
    pub pre_digest: Digest,
    pub backup_digest: Digest,
    pub post_digest: Option<Digest>,
    /// Similarity of the Pre and Backup values; absent until computed or
    /// when a value could not be loaded.
    pub r: Option<f64>,
    /// Weight in bytes.
    pub s: u64,
    pub p_class: PClass,
    pub wal_explained: bool,
}

/// The ten name sets of one evaluation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameSets {
    pub e: BTreeSet<String>,
    pub n_over: BTreeSet<String>,
    pub n_new: BTreeSet<String>,
    pub n_both: BTreeSet<String>,
    pub v_eq: BTreeSet<String>,
    pub v_ch: BTreeSet<String>,
    pub p_mis: BTreeSet<String>,
    pub p_mback: BTreeSet<String>,
    pub p_mpre: BTreeSet<String>,
    pub p_nom: BTreeSet<String>,
}

impl NameSets {
    pub fn p_set(&self, class: PClass) -> &BTreeSet<String> {
        match class {
            PClass::Mis => &self.p_mis,
            PClass::Mback => &self.p_mback,
            PClass::Mpre => &self.p_mpre,
            PClass::Nom => &self.p_nom,
        }
    }

    pub fn p_set_mut(&mut self, class: PClass) -> &mut BTreeSet<String> {
        match class {
            PClass::Mis => &mut self.p_mis,
            PClass::Mback => &mut self.p_mback,
            PClass::Mpre => &mut self.p_mpre,
            PClass::Nom => &mut self.p_nom,
        }
    }

    /// Sets in table order, with their column names.
    pub fn named(&self) -> [(&'static str, &BTreeSet<String>); 10] {
        [
            ("e", &self.e),
            ("n_over", &self.n_over),
            ("n_new", &self.n_new),
            ("n_both", &self.n_both),
            ("v_eq", &self.v_eq),
            ("v_ch", &self.v_ch),
            ("p_mis", &self.p_mis),
            ("p_mback", &self.p_mback),
            ("p_mpre", &self.p_mpre),
            ("p_nom", &self.p_nom),
        ]
    }
}

/// Classification of one (Pre, Backup, Post) triple.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunClassification {
    pub run_id: u32,
    pub pre_count: usize,
    pub backup_count: usize,
    pub post_count: usize,
    pub sets: NameSets,
    /// Names of `N_new` that also occur in Post.
    pub n_new_in_post: BTreeSet<String>,
    pub mismatches: Vec<MismatchRecord>,
    pub r_w_mean: f64,
    pub r_w_std: f64,
}
