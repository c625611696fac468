//! Content-based name-value pairs: database rows, settings keys, SMS
//! archive messages and key-value entities, plus WAL-aware explanation of
//! database mismatches.

pub mod kv;
pub mod settings;
pub mod sms;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::KvCarrier;
use crate::model::{Entry, EntryKind, Snapshot};
use crate::sqlite::{merge_wal, Database, LogicalContent, SqliteError, Value};

pub use self::kv::{decode_calllog_entity, decode_settings_entity, parse_kv_stream, write_kv_stream, CallRecord};
pub use self::settings::{parse_settings_xml, write_settings_xml, SettingsFile};
pub use self::sms::{parse_sms_backup, write_sms_backup, SmsBackup, SMS_FIELDS};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ContentError {
    #[error("not a SQLite database")]
    NotDatabase,
    #[error("recipe does not match the database: {0}")]
    RecipeMismatch(String),
    #[error("database error: {0}")]
    Database(SqliteError),
    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },
    #[error("not a compressed archive")]
    NotArchive,
    #[error("bad JSON payload: {0}")]
    Json(String),
    #[error("truncated entity at byte {offset}")]
    TruncatedEntity { offset: usize },
    #[error("corrupt entity at byte {offset}: {reason}")]
    CorruptEntity { offset: usize, reason: String },
    #[error("bad entity payload: {0}")]
    Payload(String),
    #[error("{0} is not present in the snapshot")]
    MissingSource(String),
    #[error("cannot load {name}: {message}")]
    Load { name: String, message: String },
    #[error("invalid recipe {label:?}: {message}")]
    InvalidRecipe { label: String, message: String },
    #[error("cannot read recipes file {path}: {message}")]
    RecipesFile { path: String, message: String },
}

impl From<SqliteError> for ContentError {
    fn from(e: SqliteError) -> Self {
        match e {
            SqliteError::NotDatabase => ContentError::NotDatabase,
            SqliteError::NoSuchTable { name, available } => {
                ContentError::RecipeMismatch(format!("no table {name:?}; tables: {}", available.join(", ")))
            }
            SqliteError::NoSuchColumn {
                table,
                column,
                available,
            } => ContentError::RecipeMismatch(format!(
                "no column {column:?} in {table:?}; columns: {}",
                available.join(", ")
            )),
            other => ContentError::Database(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    Sqlite,
    SettingsXml,
    SmsArchive,
    KvStream,
}

/// How a multi-column row is counted as atomic elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Counting {
    #[default]
    PerRow,
    PerColumn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KvDecoder {
    Calllog,
    Settings,
}

/// Where the backup copy of a recipe's data lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackupSource {
    pub format: SourceFormat,
    /// Device path of an archive file inside the backup snapshot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Package whose key-value carriers hold the data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub package: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<KvDecoder>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecipe {
    pub label: String,
    /// Database path, or the directory holding the settings files.
    pub source_path: String,
    pub format: SourceFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(default)]
    pub key_columns: Vec<String>,
    #[serde(default)]
    pub value_columns: Vec<String>,
    /// Settings files under `source_path`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<String>,
    #[serde(default)]
    pub counting: Counting,
    /// Fill a `recipients` value column through the thread → address join.
    #[serde(default)]
    pub recipients_join: bool,
    /// Apply a `-wal` sidecar before reading the reference database.
    #[serde(default)]
    pub merge_wal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backup: Option<BackupSource>,
}

impl ExtractionRecipe {
    pub fn validate(&self) -> Result<(), ContentError> {
        let bad = |message: &str| {
            Err(ContentError::InvalidRecipe {
                label: self.label.clone(),
                message: message.to_string(),
            })
        };
        match self.format {
            SourceFormat::Sqlite => {
                if self.table.is_none() {
                    return bad("sqlite recipes need a table");
                }
                if self.value_columns.is_empty() {
                    return bad("sqlite recipes need at least one value column");
                }
                if self.key_columns.is_empty() {
                    return bad("sqlite recipes need key columns");
                }
            }
            SourceFormat::SettingsXml => {
                if self.files.is_empty() {
                    return bad("settings recipes need at least one file");
                }
            }
            SourceFormat::SmsArchive | SourceFormat::KvStream => {
                return bad("reference data must be a database or settings files");
            }
        }
        if let Some(b) = &self.backup {
            match b.format {
                SourceFormat::SmsArchive if b.path.is_none() => return bad("sms archive backup needs a path"),
                SourceFormat::KvStream if b.package.is_none() || b.decoder.is_none() => {
                    return bad("key-value backup needs a package and a decoder")
                }
                SourceFormat::Sqlite | SourceFormat::SettingsXml => {
                    return bad("backup side must be an sms archive or a key-value stream")
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Reads a recipes file: a JSON array of recipes.
pub fn load_recipes(path: &Path) -> Result<Vec<ExtractionRecipe>, ContentError> {
    let err = |message: String| ContentError::RecipesFile {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let recipes: Vec<ExtractionRecipe> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    for r in &recipes {
        r.validate()?;
    }
    Ok(recipes)
}

const BUILTIN_RECIPES: &str = include_str!("../../data/android_recipes.json");

/// Recipes for the Android SMS, call log and settings backups.
pub fn builtin_recipes() -> Vec<ExtractionRecipe> {
    serde_json::from_str(BUILTIN_RECIPES).expect("bundled recipes parse")
}

/// Percent-encodes the characters that structure a locator.
pub fn encode_locator_part(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '%' => out.push_str("%25"),
            '/' => out.push_str("%2F"),
            '#' => out.push_str("%23"),
            '|' => out.push_str("%7C"),
            c => out.push(c),
        }
    }
    out
}

fn row_key(values: &BTreeMap<String, String>, key_columns: &[String]) -> Result<String, String> {
    key_columns
        .iter()
        .map(|k| {
            values
                .get(k)
                .map(|v| encode_locator_part(v))
                .ok_or_else(|| format!("key column {k:?} missing"))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(|parts| parts.join("|"))
}

/// Rows keyed by locator prefix (`table/rowkey` or `file/key`), each
/// holding canonical column values.
type RowSet = BTreeMap<String, BTreeMap<String, String>>;

/// Outcome of extracting one side of a recipe.
#[derive(Debug, Clone, Default)]
pub struct ContentSide {
    pub entries: Vec<Entry>,
    pub warnings: Vec<String>,
}

fn rows_to_entries(recipe: &ExtractionRecipe, rows: RowSet) -> Vec<Entry> {
    let mut entries = Vec::new();
    for (locator, values) in rows {
        let base = format!("{}#{locator}", recipe.source_path);
        let columns: Vec<&String> = if recipe.value_columns.is_empty() {
            values.keys().collect()
        } else {
            recipe.value_columns.iter().filter(|c| values.contains_key(*c)).collect()
        };
        match recipe.counting {
            Counting::PerRow => {
                let mut text = String::new();
                for c in columns {
                    text.push_str(c);
                    text.push('=');
                    text.push_str(&values[c]);
                    text.push('\n');
                }
                entries.push(Entry::from_bytes(base, EntryKind::ContentBased, text.into_bytes()));
            }
            Counting::PerColumn => {
                for c in columns {
                    entries.push(Entry::from_bytes(
                        format!("{base}/{}", encode_locator_part(c)),
                        EntryKind::ContentBased,
                        values[c].clone().into_bytes(),
                    ));
                }
            }
        }
    }
    entries
}

fn insert_row(rows: &mut RowSet, warnings: &mut Vec<String>, locator: String, values: BTreeMap<String, String>) {
    if rows.insert(locator.clone(), values).is_some() {
        log::warn!("duplicate row key {locator}, keeping the last");
        warnings.push(format!("duplicate row key {locator}, keeping the last"));
    }
}

/// `recipients` per sms row via threads.recipient_ids (space separated
/// canonical_addresses ids).
fn recipients_by_thread(db: &Database<'_>) -> Result<BTreeMap<String, String>, ContentError> {
    let addresses = db.read_table("canonical_addresses")?;
    let (aid, aaddr) = (addresses.column_index("_id")?, addresses.column_index("address")?);
    let address_of: BTreeMap<String, String> = addresses
        .rows
        .iter()
        .map(|r| (r.values[aid].canonical(), r.values[aaddr].canonical()))
        .collect();
    let threads = db.read_table("threads")?;
    let (tid, tids) = (threads.column_index("_id")?, threads.column_index("recipient_ids")?);
    Ok(threads
        .rows
        .iter()
        .map(|r| {
            let ids = match &r.values[tids] {
                Value::Text(t) => t.clone(),
                other => other.canonical(),
            };
            let joined = ids
                .split_whitespace()
                .map(|id| address_of.get(id).cloned().unwrap_or_else(|| format!("?{id}")))
                .collect::<Vec<_>>()
                .join(",");
            (r.values[tid].canonical(), joined)
        })
        .collect())
}

fn sqlite_rows(db_bytes: &[u8], recipe: &ExtractionRecipe, warnings: &mut Vec<String>) -> Result<RowSet, ContentError> {
    let db = Database::parse(db_bytes)?;
    let table_name = recipe.table.as_deref().ok_or_else(|| ContentError::InvalidRecipe {
        label: recipe.label.clone(),
        message: "no table".into(),
    })?;
    let table = db.read_table(table_name)?;
    let wants_recipients = recipe.recipients_join && recipe.value_columns.iter().any(|c| c == "recipients");
    let recipients = if wants_recipients {
        Some(recipients_by_thread(&db)?)
    } else {
        None
    };
    let thread_col = if wants_recipients {
        Some(table.column_index("thread_id")?)
    } else {
        None
    };
    let mut needed: Vec<(String, usize)> = Vec::new();
    for c in recipe.key_columns.iter().chain(&recipe.value_columns) {
        if wants_recipients && c == "recipients" {
            continue;
        }
        if !needed.iter().any(|(n, _)| n == c) {
            needed.push((c.clone(), table.column_index(c)?));
        }
    }
    let mut rows = RowSet::new();
    for row in &table.rows {
        let mut values: BTreeMap<String, String> =
            needed.iter().map(|(n, i)| (n.clone(), row.values[*i].canonical())).collect();
        if let (Some(map), Some(tc)) = (&recipients, thread_col) {
            let thread = row.values[tc].canonical();
            values.insert("recipients".into(), map.get(&thread).cloned().unwrap_or_else(|| "NULL".into()));
        }
        let key = row_key(&values, &recipe.key_columns).map_err(ContentError::RecipeMismatch)?;
        values.retain(|k, _| recipe.value_columns.contains(k));
        insert_row(&mut rows, warnings, format!("{}/{key}", encode_locator_part(table_name)), values);
    }
    Ok(rows)
}

/// One pair per (row, value column): `source_path#table/rowkey/column`.
/// Reads the main database file only.
pub fn extract_sqlite_values(db: &[u8], recipe: &ExtractionRecipe) -> Result<Vec<(String, String)>, ContentError> {
    let mut warnings = Vec::new();
    let rows = sqlite_rows(db, recipe, &mut warnings)?;
    let mut out = Vec::new();
    for (locator, values) in rows {
        for c in &recipe.value_columns {
            if let Some(v) = values.get(c) {
                out.push((
                    format!("{}#{locator}/{}", recipe.source_path, encode_locator_part(c)),
                    v.clone(),
                ));
            }
        }
    }
    Ok(out)
}

fn load_entry(snapshot: &Snapshot, path: &str) -> Result<Option<Vec<u8>>, ContentError> {
    match snapshot.get(path) {
        None => Ok(None),
        Some(e) => e.load().map(Some).map_err(|err| ContentError::Load {
            name: path.to_string(),
            message: err.to_string(),
        }),
    }
}

fn settings_rows(file: &str, parsed: Vec<(String, Option<String>)>, rows: &mut RowSet, warnings: &mut Vec<String>) {
    for (key, value) in parsed {
        let mut values = BTreeMap::new();
        values.insert("value".to_string(), value.unwrap_or_else(|| "NULL".into()));
        insert_row(rows, warnings, format!("{}/{}", encode_locator_part(file), encode_locator_part(&key)), values);
    }
}

/// Content entries of the reference side (Pre or Post) of a recipe.
pub fn extract_reference(recipe: &ExtractionRecipe, snapshot: &Snapshot) -> Result<ContentSide, ContentError> {
    let mut side = ContentSide::default();
    let rows = match recipe.format {
        SourceFormat::Sqlite => {
            let mut db = load_entry(snapshot, &recipe.source_path)?
                .ok_or_else(|| ContentError::MissingSource(recipe.source_path.clone()))?;
            if recipe.merge_wal {
                if let Some(wal) = load_entry(snapshot, &format!("{}-wal", recipe.source_path))? {
                    db = merge_wal(&db, &wal)?.bytes;
                }
            }
            sqlite_rows(&db, recipe, &mut side.warnings)?
        }
        SourceFormat::SettingsXml => {
            let mut rows = RowSet::new();
            for file in &recipe.files {
                let path = format!("{}/{file}", recipe.source_path.trim_end_matches('/'));
                match load_entry(snapshot, &path)? {
                    Some(bytes) => {
                        let parsed = parse_settings_xml(&bytes)?;
                        for key in &parsed.duplicate_keys {
                            side.warnings.push(format!("{path}: duplicate setting {key:?}, last value kept"));
                        }
                        settings_rows(file, parsed.settings, &mut rows, &mut side.warnings);
                    }
                    None => side.warnings.push(format!("{path} is not present")),
                }
            }
            rows
        }
        SourceFormat::SmsArchive | SourceFormat::KvStream => {
            return Err(ContentError::InvalidRecipe {
                label: recipe.label.clone(),
                message: "reference data must be a database or settings files".into(),
            })
        }
    };
    side.entries = rows_to_entries(recipe, rows);
    Ok(side)
}

/// Settings entity keys name the file they were taken from.
pub fn settings_file_for_entity(key: &str) -> String {
    format!("settings_{key}.xml")
}

/// Content entries of the backup side of a recipe, named in the reference
/// namespace. A backup that lacks the carrier yields no entries and a
/// warning.
pub fn extract_backup(
    recipe: &ExtractionRecipe,
    backup: &Snapshot,
    carriers: &[KvCarrier],
) -> Result<ContentSide, ContentError> {
    let mut side = ContentSide::default();
    let Some(source) = &recipe.backup else {
        return Err(ContentError::InvalidRecipe {
            label: recipe.label.clone(),
            message: "no backup source".into(),
        });
    };
    let table = recipe.table.clone().unwrap_or_default();
    let mut rows = RowSet::new();
    match source.format {
        SourceFormat::SmsArchive => {
            let path = source.path.as_deref().unwrap_or_default();
            let Some(bytes) = load_entry(backup, path)? else {
                side.warnings.push(format!("{path} is not in the backup"));
                return Ok(side);
            };
            let archive = parse_sms_backup(&bytes)?;
            if archive.omitted_fields > 0 {
                side.warnings
                    .push(format!("{path}: {} message fields absent", archive.omitted_fields));
            }
            for values in archive.messages {
                let key = row_key(&values, &recipe.key_columns).map_err(ContentError::RecipeMismatch)?;
                let values = values.into_iter().filter(|(k, _)| recipe.value_columns.contains(k)).collect();
                insert_row(&mut rows, &mut side.warnings, format!("{}/{key}", encode_locator_part(&table)), values);
            }
        }
        SourceFormat::KvStream => {
            let package = source.package.as_deref().unwrap_or_default();
            let streams: Vec<&KvCarrier> = carriers.iter().filter(|c| c.package == package).collect();
            if streams.is_empty() {
                side.warnings.push(format!("no key-value data for {package} in the backup"));
            }
            for carrier in streams {
                let bytes = carrier.entry.load().map_err(|e| ContentError::Load {
                    name: carrier.entry.name.clone(),
                    message: e.to_string(),
                })?;
                let entities = match parse_kv_stream(&bytes) {
                    Ok(e) => e,
                    Err((partial, err)) => {
                        side.warnings.push(format!("{}: {err}", carrier.entry.name));
                        partial
                    }
                };
                for (key, payload) in entities {
                    match source.decoder {
                        Some(KvDecoder::Calllog) => {
                            let call = decode_calllog_entity(&key, &payload)?;
                            let values = call.columns();
                            let rk = row_key(&values, &recipe.key_columns).map_err(ContentError::RecipeMismatch)?;
                            let values = values.into_iter().filter(|(k, _)| recipe.value_columns.contains(k)).collect();
                            insert_row(&mut rows, &mut side.warnings, format!("{}/{rk}", encode_locator_part(&table)), values);
                        }
                        Some(KvDecoder::Settings) => {
                            let file = settings_file_for_entity(&key);
                            settings_rows(&file, decode_settings_entity(&payload)?, &mut rows, &mut side.warnings);
                        }
                        None => {
                            return Err(ContentError::InvalidRecipe {
                                label: recipe.label.clone(),
                                message: "key-value backup without a decoder".into(),
                            })
                        }
                    }
                }
            }
        }
        SourceFormat::Sqlite | SourceFormat::SettingsXml => {
            return Err(ContentError::InvalidRecipe {
                label: recipe.label.clone(),
                message: "backup side must be an sms archive or a key-value stream".into(),
            })
        }
    }
    side.entries = rows_to_entries(recipe, rows);
    Ok(side)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "kebab-case")]
pub enum DbExplanation {
    LogicallyEqual,
    WalExplained,
    Different {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        diagnostic: Option<String>,
    },
}

fn logical(bytes: &[u8]) -> Result<LogicalContent, SqliteError> {
    Database::parse(bytes)?.logical_content()
}

/// Compares databases at the level of tables and canonical rows. Parser
/// failures are reported as `Different` with a diagnostic.
pub fn explain_db_mismatch(pre_db: &[u8], pre_wal: Option<&[u8]>, backup_db: &[u8]) -> DbExplanation {
    let different = |what: &str, e: SqliteError| DbExplanation::Different {
        diagnostic: Some(format!("{what}: {e}")),
    };
    let backup = match logical(backup_db) {
        Ok(c) => c,
        Err(e) => return different("backup database", e),
    };
    match logical(pre_db) {
        Ok(pre) if pre == backup => return DbExplanation::LogicallyEqual,
        Ok(_) => {}
        Err(e) => return different("pre database", e),
    }
    let Some(wal) = pre_wal.filter(|w| !w.is_empty()) else {
        return DbExplanation::Different { diagnostic: None };
    };
    let merged = match merge_wal(pre_db, wal) {
        Ok(m) => m,
        Err(e) => return different("WAL", e),
    };
    match logical(&merged.bytes) {
        Ok(m) if m == backup => DbExplanation::WalExplained,
        Ok(_) => DbExplanation::Different { diagnostic: None },
        Err(e) => different("merged database", e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_recipes_validate() {
        let recipes = builtin_recipes();
        assert_eq!(recipes.len(), 3);
        for r in &recipes {
            r.validate().unwrap();
        }
    }

    #[test]
    fn locator_encoding() {
        assert_eq!(encode_locator_part("a/b#c|d%e"), "a%2Fb%23c%7Cd%25e");
        let mut v = BTreeMap::new();
        v.insert("date".to_string(), "5".to_string());
        v.insert("address".to_string(), "+1|2".to_string());
        assert_eq!(row_key(&v, &["date".into(), "address".into()]).unwrap(), "5|+1%7C2");
        assert!(row_key(&v, &["x".into()]).is_err());
    }

    #[test]
    fn recipe_validation() {
        let mut r = ExtractionRecipe {
            label: "t".into(),
            source_path: "/db".into(),
            format: SourceFormat::Sqlite,
            table: Some("t".into()),
            key_columns: vec!["id".into()],
            value_columns: vec![],
            files: vec![],
            counting: Counting::PerRow,
            recipients_join: false,
            merge_wal: false,
            backup: None,
        };
        assert!(r.validate().is_err());
        r.value_columns.push("v".into());
        assert!(r.validate().is_ok());
        r.backup = Some(BackupSource {
            format: SourceFormat::KvStream,
            path: None,
            package: Some("p".into()),
            decoder: None,
        });
        assert!(r.validate().is_err());
    }

    #[test]
    fn garbage_is_different_not_a_crash() {
        match explain_db_mismatch(b"nope", None, b"nope") {
            DbExplanation::Different { diagnostic } => assert!(diagnostic.is_some()),
            other => panic!("unexpected {other:?}"),
        }
    }
}
