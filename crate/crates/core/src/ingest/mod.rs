//! Builds snapshots from directory trees, tar streams, Android `.ab` files
//! and iOS backup directories.

pub mod ab;
pub mod tar;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Digest, Entry, EntryKind, Platform, Snapshot, SnapshotLabel, ValueRef};
use crate::pathmap::{
    compute_file_id, map_android_backup_path, map_ios_manifest_row, AndroidMapping, ContainerResolver,
    InjectivityGuard, MappingRules, PathMapError,
};
use crate::sqlite::{merge_wal, Database, SqliteError, Value};

pub use self::ab::{open_android_backup, unwrap_android_backup, AbHeader};
pub use self::tar::{MemberKind, TarMember, TarReader};

/// Prefix stored in front of a symlink target to form the entry value.
pub const SYMLINK_MARKER: &[u8] = b"\0symlink\0";

pub const MANIFEST_DB: &str = "Manifest.db";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("source {path} is not readable: {message}")]
    Source { path: PathBuf, message: String },
    #[error("read error: {0}")]
    Read(String),
    #[error("tar archive truncated at byte {offset}")]
    TruncatedArchive { offset: u64 },
    #[error("corrupt tar header at byte {offset}: {reason}")]
    CorruptHeader { offset: u64, reason: String },
    #[error("not an Android backup: {0}")]
    NotAndroidBackup(String),
    #[error("unsupported Android backup encryption {0:?}")]
    UnsupportedEncryption(String),
    #[error("corrupt Android backup payload: {0}")]
    CorruptPayload(String),
    #[error("no Manifest.db in {0}")]
    MissingManifest(PathBuf),
    #[error("unreadable Manifest.db: {0}")]
    CorruptManifest(String),
    #[error("format {0:?} cannot be ingested this way")]
    WrongFormat(SourceFormat),
    #[error(transparent)]
    Mapping(#[from] PathMapError),
    #[error("blob store error: {0}")]
    BlobStore(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    DirTree,
    Tar,
    AndroidAb,
    IosBackupDir,
}

/// Where a snapshot comes from.
///
/// Recognised options: `device_prefix` (prepended to member paths of
/// plain trees and tars) and `include_prefixes` (comma separated list of
/// name prefixes to keep).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub format: SourceFormat,
    pub path: PathBuf,
    #[serde(default)]
    pub options: BTreeMap<String, String>,
}

impl SourceSpec {
    pub fn new(format: SourceFormat, path: impl Into<PathBuf>) -> Self {
        SourceSpec {
            format,
            path: path.into(),
            options: BTreeMap::new(),
        }
    }

    pub fn with_option(mut self, key: &str, value: impl Into<String>) -> Self {
        self.options.insert(key.to_string(), value.into());
        self
    }

    fn device_prefix(&self) -> String {
        self.options
            .get("device_prefix")
            .map(|p| p.trim_end_matches('/').to_string())
            .unwrap_or_default()
    }

    fn include_prefixes(&self) -> Vec<String> {
        self.options
            .get("include_prefixes")
            .map(|p| p.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
            .unwrap_or_default()
    }
}

/// A key-value backup payload set aside for content extraction.
#[derive(Debug, Clone)]
pub struct KvCarrier {
    pub package: String,
    pub key_path: String,
    pub entry: Entry,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    /// Files that could not be read or are not regular data, with reasons.
    pub skipped: Vec<(String, String)>,
    pub warnings: Vec<String>,
    /// Backup members no mapping rule covers.
    pub unmapped: Vec<String>,
    pub ignored: usize,
    /// iOS manifest rows whose blob file is absent.
    pub missing_blobs: Vec<String>,
    pub kv_carriers: Vec<KvCarrier>,
    pub ab_header: Option<AbHeader>,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub snapshot: Snapshot,
    pub report: IngestReport,
}

/// Everything an ingestion job needs besides the source itself.
#[derive(Debug, Clone)]
pub struct IngestContext {
    pub label: SnapshotLabel,
    pub platform: Platform,
    pub run_id: u32,
    pub rules: MappingRules,
    pub resolver: ContainerResolver,
    /// When set, values read from stream formats are spilled to this
    /// content-addressed directory instead of being kept in memory.
    pub blob_dir: Option<PathBuf>,
}

impl IngestContext {
    pub fn new(label: SnapshotLabel, platform: Platform, run_id: u32) -> Self {
        IngestContext {
            label,
            platform,
            run_id,
            rules: MappingRules::builtin(),
            resolver: ContainerResolver::new(),
            blob_dir: None,
        }
    }

    fn store(&self, bytes: Vec<u8>) -> Result<(Digest, u64, ValueRef), IngestError> {
        let digest = Digest::of(&bytes);
        let size = bytes.len() as u64;
        match &self.blob_dir {
            None => Ok((digest, size, ValueRef::Inline(bytes.into()))),
            Some(dir) => {
                let path = dir.join(digest.blob_path());
                if !path.exists() {
                    let parent = path.parent().expect("blob path has a parent");
                    fs::create_dir_all(parent).map_err(|e| IngestError::BlobStore(e.to_string()))?;
                    fs::write(&path, &bytes).map_err(|e| IngestError::BlobStore(e.to_string()))?;
                }
                Ok((digest, size, ValueRef::File(path)))
            }
        }
    }

    fn entry(&self, name: String, bytes: Vec<u8>) -> Result<Entry, IngestError> {
        let (digest, size, value) = self.store(bytes)?;
        Ok(Entry {
            name,
            kind: EntryKind::FileBased,
            size,
            digest,
            value,
        })
    }

    fn finish(&self, entries: Vec<Entry>, spec: &SourceSpec) -> Snapshot {
        let prefixes = spec.include_prefixes();
        let snapshot = Snapshot::new(self.label, self.platform, self.run_id, entries).with_captured_at(chrono::Utc::now());
        if prefixes.is_empty() {
            snapshot
        } else {
            snapshot.filter_prefixes(&prefixes)
        }
    }
}

/// Ingests any supported source.
pub fn ingest(spec: &SourceSpec, ctx: &IngestContext) -> Result<Ingested, IngestError> {
    match spec.format {
        SourceFormat::DirTree => ingest_directory_tree(spec, ctx),
        SourceFormat::Tar => ingest_tar_stream(spec, ctx),
        SourceFormat::AndroidAb => ingest_android_backup(spec, ctx),
        SourceFormat::IosBackupDir => ingest_ios_backup(spec, ctx),
    }
}

fn source_err(path: &Path, e: impl ToString) -> IngestError {
    IngestError::Source {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn join_device_path(prefix: &str, relative: &str) -> String {
    let relative = relative.trim_start_matches("./").trim_start_matches('/').trim_end_matches('/');
    format!("{prefix}/{relative}")
}

/// One file-based entry per regular file under `spec.path`. Symlinks are
/// recorded (not followed) as [`SYMLINK_MARKER`] + target.
pub fn ingest_directory_tree(spec: &SourceSpec, ctx: &IngestContext) -> Result<Ingested, IngestError> {
    if spec.format != SourceFormat::DirTree {
        return Err(IngestError::WrongFormat(spec.format));
    }
    let root = &spec.path;
    let meta = fs::metadata(root).map_err(|e| source_err(root, e))?;
    if !meta.is_dir() {
        return Err(source_err(root, "not a directory"));
    }
    let prefix = spec.device_prefix();
    let mut report = IngestReport::default();
    let mut entries = Vec::new();

    for item in walkdir::WalkDir::new(root).follow_links(false).sort_by_file_name() {
        let item = match item {
            Ok(item) => item,
            Err(e) => {
                let name = e.path().map(|p| p.display().to_string()).unwrap_or_default();
                warn!("skipping {name}: {e}");
                report.skipped.push((name, e.to_string()));
                continue;
            }
        };
        if item.depth() == 0 {
            continue;
        }
        let rel = item.path().strip_prefix(root).expect("walkdir stays under root");
        let rel = rel.to_string_lossy().replace(std::path::MAIN_SEPARATOR, "/");
        let name = join_device_path(&prefix, &rel);
        let file_type = item.file_type();
        if file_type.is_dir() {
            continue;
        }
        if file_type.is_symlink() {
            match fs::read_link(item.path()) {
                Ok(target) => {
                    let mut value = SYMLINK_MARKER.to_vec();
                    value.extend_from_slice(target.to_string_lossy().as_bytes());
                    entries.push(Entry::from_bytes(name, EntryKind::FileBased, value));
                }
                Err(e) => {
                    warn!("skipping symlink {name}: {e}");
                    report.skipped.push((name, e.to_string()));
                }
            }
            continue;
        }
        if !file_type.is_file() {
            debug!("skipping special file {name}");
            report.skipped.push((name, "special file".into()));
            continue;
        }
        let hashed = File::open(item.path()).and_then(|f| Digest::of_reader(BufReader::new(f)));
        match hashed {
            Ok((digest, size)) => entries.push(Entry {
                name,
                kind: EntryKind::FileBased,
                size,
                digest,
                value: ValueRef::File(item.path().to_path_buf()),
            }),
            Err(e) => {
                warn!("skipping unreadable {name}: {e}");
                report.skipped.push((name, e.to_string()));
            }
        }
    }
    Ok(Ingested {
        snapshot: ctx.finish(entries, spec),
        report,
    })
}

/// How tar member paths become entry names.
enum TarNaming<'a> {
    Plain { prefix: String },
    AndroidBackup { rules: &'a MappingRules },
}

fn ingest_tar_reader<R: Read>(
    reader: R,
    naming: TarNaming<'_>,
    ctx: &IngestContext,
    report: &mut IngestReport,
) -> Result<Vec<Entry>, IngestError> {
    // member path -> entry, last occurrence wins
    let mut by_member: BTreeMap<String, Entry> = BTreeMap::new();
    let mut guard = InjectivityGuard::new();
    let mut kv: BTreeMap<String, KvCarrier> = BTreeMap::new();

    for member in TarReader::new(reader) {
        let member = member?;
        let member_path = member.path.trim_start_matches("./").trim_start_matches('/').to_string();
        let value = match member.kind {
            MemberKind::Directory => continue,
            MemberKind::Regular => member.data,
            MemberKind::Symlink => {
                let mut v = SYMLINK_MARKER.to_vec();
                v.extend_from_slice(member.link_target.as_bytes());
                v
            }
            MemberKind::HardLink => {
                let target = member.link_target.trim_start_matches("./").trim_start_matches('/');
                match by_member.get(target) {
                    Some(e) => e.value.load().map_err(|e| IngestError::Read(e.to_string()))?,
                    None => {
                        report
                            .skipped
                            .push((member_path, format!("hard link to unknown member {target:?}")));
                        continue;
                    }
                }
            }
            MemberKind::Special | MemberKind::Other(_) => {
                debug!("skipping non-regular tar member {member_path}");
                report.skipped.push((member_path, format!("{:?} member", member.kind)));
                continue;
            }
        };

        let name = match &naming {
            TarNaming::Plain { prefix } => join_device_path(prefix, &member_path),
            TarNaming::AndroidBackup { rules } => match map_android_backup_path(rules, &member_path) {
                AndroidMapping::Device(path) => path,
                AndroidMapping::Ignored => {
                    report.ignored += 1;
                    continue;
                }
                AndroidMapping::Unmapped => {
                    report.unmapped.push(member_path);
                    continue;
                }
                AndroidMapping::KeyValue { package, key_path } => {
                    let mut entry = ctx.entry(format!("{package}:k/{key_path}"), value)?;
                    entry.kind = EntryKind::ContentBased;
                    if kv.contains_key(&member_path) {
                        report.warnings.push(format!("duplicate tar member {member_path:?}, keeping the last"));
                    }
                    kv.insert(member_path, KvCarrier { package, key_path, entry });
                    continue;
                }
            },
        };
        guard.record(&member_path, &name)?;
        if by_member.contains_key(&member_path) {
            warn!("duplicate tar member {member_path:?}, keeping the last");
            report.warnings.push(format!("duplicate tar member {member_path:?}, keeping the last"));
        }
        let entry = ctx.entry(name, value)?;
        by_member.insert(member_path, entry);
    }
    report.kv_carriers.extend(kv.into_values());
    Ok(by_member.into_values().collect())
}

/// One file-based entry per regular tar member, named by the member path
/// under the `device_prefix` option.
pub fn ingest_tar_stream(spec: &SourceSpec, ctx: &IngestContext) -> Result<Ingested, IngestError> {
    if spec.format != SourceFormat::Tar {
        return Err(IngestError::WrongFormat(spec.format));
    }
    let file = File::open(&spec.path).map_err(|e| source_err(&spec.path, e))?;
    let mut report = IngestReport::default();
    let naming = TarNaming::Plain {
        prefix: spec.device_prefix(),
    };
    let entries = ingest_tar_reader(BufReader::new(file), naming, ctx, &mut report)?;
    Ok(Ingested {
        snapshot: ctx.finish(entries, spec),
        report,
    })
}

/// Ingests tar bytes already in memory with plain naming.
pub fn ingest_tar_bytes(bytes: &[u8], prefix: &str, ctx: &IngestContext) -> Result<Ingested, IngestError> {
    let mut report = IngestReport::default();
    let naming = TarNaming::Plain {
        prefix: prefix.trim_end_matches('/').to_string(),
    };
    let entries = ingest_tar_reader(bytes, naming, ctx, &mut report)?;
    let spec = SourceSpec::new(SourceFormat::Tar, "<memory>");
    Ok(Ingested {
        snapshot: ctx.finish(entries, &spec),
        report,
    })
}

/// Unwraps an `.ab` file and maps every member to its device path.
pub fn ingest_android_backup(spec: &SourceSpec, ctx: &IngestContext) -> Result<Ingested, IngestError> {
    if spec.format != SourceFormat::AndroidAb {
        return Err(IngestError::WrongFormat(spec.format));
    }
    let file = File::open(&spec.path).map_err(|e| source_err(&spec.path, e))?;
    let (header, payload) = open_android_backup(BufReader::new(file))?;
    let mut report = IngestReport {
        ab_header: Some(header),
        ..Default::default()
    };
    // decompression errors surface as read errors from the tar reader
    let entries = ingest_tar_reader(payload, TarNaming::AndroidBackup { rules: &ctx.rules }, ctx, &mut report)
        .map_err(|e| match e {
            IngestError::Read(msg) => IngestError::CorruptPayload(msg),
            other => other,
        })?;
    Ok(Ingested {
        snapshot: ctx.finish(entries, spec),
        report,
    })
}

/// A `Files` row of `Manifest.db`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub file_id: String,
    pub domain: String,
    pub relative_path: String,
    pub flags: i64,
}

/// Reads the `Files` table of an iOS backup manifest, applying a
/// `Manifest.db-wal` sidecar when one is present.
pub fn read_ios_manifest(backup_dir: &Path) -> Result<Vec<ManifestRow>, IngestError> {
    let db_path = backup_dir.join(MANIFEST_DB);
    if !db_path.is_file() {
        return Err(IngestError::MissingManifest(backup_dir.to_path_buf()));
    }
    let mut bytes = fs::read(&db_path).map_err(|e| IngestError::CorruptManifest(e.to_string()))?;
    let wal_path = backup_dir.join(format!("{MANIFEST_DB}-wal"));
    if let Ok(wal) = fs::read(&wal_path) {
        bytes = merge_wal(&bytes, &wal)
            .map_err(|e| IngestError::CorruptManifest(format!("WAL: {e}")))?
            .bytes;
    }
    let corrupt = |e: SqliteError| IngestError::CorruptManifest(e.to_string());
    let db = Database::parse(&bytes).map_err(corrupt)?;
    let table = db.read_table("Files").map_err(corrupt)?;
    let col = |name: &str| table.column_index(name).map_err(corrupt);
    let (id_col, domain_col, path_col, flags_col) =
        (col("fileID")?, col("domain")?, col("relativePath")?, col("flags")?);
    let text = |v: &Value| match v {
        Value::Text(t) => t.clone(),
        Value::Null => String::new(),
        other => other.canonical(),
    };
    Ok(table
        .rows
        .iter()
        .map(|row| ManifestRow {
            file_id: text(&row.values[id_col]),
            domain: text(&row.values[domain_col]),
            relative_path: text(&row.values[path_col]),
            flags: match row.values[flags_col] {
                Value::Integer(f) => f,
                _ => 0,
            },
        })
        .collect())
}

const IOS_FLAG_FILE: i64 = 1;

/// One entry per file row of `Manifest.db` whose blob is present, named by
/// the mapped device path.
pub fn ingest_ios_backup(spec: &SourceSpec, ctx: &IngestContext) -> Result<Ingested, IngestError> {
    if spec.format != SourceFormat::IosBackupDir {
        return Err(IngestError::WrongFormat(spec.format));
    }
    let rows = read_ios_manifest(&spec.path)?;
    let mut report = IngestReport::default();
    let mut guard = InjectivityGuard::new();
    let mut entries = Vec::new();
    for row in rows.into_iter().filter(|r| r.flags == IOS_FLAG_FILE) {
        let expected_id = compute_file_id(&row.domain, &row.relative_path);
        if expected_id != row.file_id {
            report.warnings.push(format!(
                "fileID {} does not match {}-{} (expected {expected_id})",
                row.file_id, row.domain, row.relative_path
            ));
        }
        let name = match map_ios_manifest_row(&ctx.rules, &row.domain, &row.relative_path, &ctx.resolver) {
            Ok(name) => name,
            Err(e) => {
                report.unmapped.push(format!("{}-{}: {e}", row.domain, row.relative_path));
                continue;
            }
        };
        if row.file_id.len() < 2 {
            report.missing_blobs.push(row.file_id);
            continue;
        }
        let blob = spec.path.join(&row.file_id[..2]).join(&row.file_id);
        let hashed = File::open(&blob).and_then(|f| Digest::of_reader(BufReader::new(f)));
        match hashed {
            Ok((digest, size)) => {
                guard.record(&row.file_id, &name)?;
                entries.push(Entry {
                    name,
                    kind: EntryKind::FileBased,
                    size,
                    digest,
                    value: ValueRef::File(blob),
                });
            }
            Err(_) => report.missing_blobs.push(row.file_id),
        }
    }
    Ok(Ingested {
        snapshot: ctx.finish(entries, spec),
        report,
    })
}
