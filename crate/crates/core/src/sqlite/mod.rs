//! Read-only SQLite main-database and WAL file readers.
//!
//! Supports table scans over rowid and `WITHOUT ROWID` tables, including
//! overflow chains, and folding a WAL into a main file. There is no query
//! engine: callers name a table and get every row back.

mod schema;
pub mod wal;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use schema::{parse_create_table, ColumnDef, TableDef};
pub use wal::{merge_wal, wal_checksum, WalHeader, WalMerge};

const HEADER_MAGIC: &[u8; 16] = b"SQLite format 3\0";
const MAX_TREE_DEPTH: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SqliteError {
    #[error("not a SQLite database")]
    NotDatabase,
    #[error("corrupt database (page {page}): {message}")]
    Corrupt { page: u32, message: String },
    #[error("no table {name:?}; available: {available:?}")]
    NoSuchTable { name: String, available: Vec<String> },
    #[error("table {table:?} has no column {column:?}; available: {available:?}")]
    NoSuchColumn {
        table: String,
        column: String,
        available: Vec<String>,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("not a WAL file")]
    NotWal,
    #[error("WAL does not belong to this database: {0}")]
    WalMismatch(String),
}

fn corrupt(page: u32, message: impl Into<String>) -> SqliteError {
    SqliteError::Corrupt {
        page,
        message: message.into(),
    }
}

/// A column value as stored in a record.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Value {
    /// Canonical text used for string-based comparison: integers in
    /// decimal, reals in shortest round-trip form (always with a `.` or
    /// exponent), text as-is, blobs as lowercase hex and NULL as `NULL`.
    pub fn canonical(&self) -> String {
        match self {
            Value::Null => "NULL".to_string(),
            Value::Integer(i) => i.to_string(),
            Value::Real(r) => format!("{r:?}"),
            Value::Text(t) => t.clone(),
            Value::Blob(b) => hex::encode(b),
        }
    }
}

/// Rowid (absent for index records) and column values of one cell.
type Record = (Option<i64>, Vec<Value>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TextEncoding {
    Utf8,
    Utf16Le,
    Utf16Be,
}

/// One row of `sqlite_schema`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SchemaObject {
    pub kind: String,
    pub name: String,
    pub tbl_name: String,
    pub rootpage: u32,
    pub sql: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub rowid: Option<i64>,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone)]
pub struct TableRows {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl TableRows {
    pub fn column_index(&self, column: &str) -> Result<usize, SqliteError> {
        self.columns
            .iter()
            .position(|c| c.eq_ignore_ascii_case(column))
            .ok_or_else(|| SqliteError::NoSuchColumn {
                table: self.name.clone(),
                column: column.to_string(),
                available: self.columns.clone(),
            })
    }
}

/// Table contents reduced to what a string comparison can see: schema
/// rows (minus root page numbers) and each table's rows as sorted lists of
/// canonical values. Two databases with equal logical content hold the
/// same data even if their page layouts differ.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LogicalContent {
    pub schema: BTreeSet<(String, String, String, Option<String>)>,
    pub tables: BTreeMap<String, Vec<Vec<String>>>,
}

impl LogicalContent {
    pub fn row_count(&self, table: &str) -> usize {
        self.tables.get(table).map_or(0, Vec::len)
    }
}

/// A parsed view over main-database bytes.
pub struct Database<'a> {
    data: &'a [u8],
    page_size: usize,
    usable: usize,
    page_count: u32,
    encoding: TextEncoding,
}

pub(crate) fn read_varint(buf: &[u8], pos: usize) -> Option<(u64, usize)> {
    let mut value: u64 = 0;
    for i in 0..9 {
        let byte = *buf.get(pos + i)?;
        if i == 8 {
            value = (value << 8) | u64::from(byte);
            return Some((value, 9));
        }
        value = (value << 7) | u64::from(byte & 0x7f);
        if byte & 0x80 == 0 {
            return Some((value, i + 1));
        }
    }
    unreachable!()
}

fn be_u16(buf: &[u8], at: usize) -> Option<u16> {
    Some(u16::from_be_bytes(buf.get(at..at + 2)?.try_into().ok()?))
}

fn be_u32(buf: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_be_bytes(buf.get(at..at + 4)?.try_into().ok()?))
}

/// Page size declared in a database header, if the header is valid.
pub fn header_page_size(data: &[u8]) -> Option<usize> {
    if data.len() < 100 || &data[..16] != HEADER_MAGIC {
        return None;
    }
    match be_u16(data, 16)? {
        1 => Some(65536),
        n if n >= 512 && n.is_power_of_two() => Some(n as usize),
        _ => None,
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum PageKind {
    InteriorIndex,
    InteriorTable,
    LeafIndex,
    LeafTable,
}

impl<'a> Database<'a> {
    pub fn parse(data: &'a [u8]) -> Result<Self, SqliteError> {
        let page_size = header_page_size(data).ok_or(SqliteError::NotDatabase)?;
        let reserved = data[20] as usize;
        if reserved >= page_size - 480 {
            return Err(corrupt(1, "reserved space leaves too little usable space"));
        }
        let encoding = match be_u32(data, 56).unwrap_or(1) {
            0 | 1 => TextEncoding::Utf8,
            2 => TextEncoding::Utf16Le,
            3 => TextEncoding::Utf16Be,
            other => return Err(corrupt(1, format!("unknown text encoding {other}"))),
        };
        let page_count = (data.len() / page_size) as u32;
        Ok(Database {
            data,
            page_size,
            usable: page_size - reserved,
            page_count,
            encoding,
        })
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn page_count(&self) -> u32 {
        self.page_count
    }

    fn page(&self, number: u32) -> Result<&'a [u8], SqliteError> {
        if number == 0 || number > self.page_count {
            return Err(corrupt(number, format!("page out of range (have {})", self.page_count)));
        }
        let start = (number as usize - 1) * self.page_size;
        Ok(&self.data[start..start + self.page_size])
    }

    fn decode_text(&self, bytes: &[u8]) -> String {
        match self.encoding {
            TextEncoding::Utf8 => String::from_utf8_lossy(bytes).into_owned(),
            TextEncoding::Utf16Le | TextEncoding::Utf16Be => {
                let units: Vec<u16> = bytes
                    .chunks_exact(2)
                    .map(|c| match self.encoding {
                        TextEncoding::Utf16Le => u16::from_le_bytes([c[0], c[1]]),
                        _ => u16::from_be_bytes([c[0], c[1]]),
                    })
                    .collect();
                String::from_utf16_lossy(&units)
            }
        }
    }

    /// Reads a cell payload, following the overflow chain when the payload
    /// does not fit on the page.
    fn read_payload(&self, page_no: u32, page: &[u8], at: usize, len: usize, table_leaf: bool) -> Result<Vec<u8>, SqliteError> {
        let u = self.usable;
        let max_local = if table_leaf { u - 35 } else { ((u - 12) * 64 / 255) - 23 };
        let local = if len <= max_local {
            len
        } else {
            let min_local = ((u - 12) * 32 / 255) - 23;
            let k = min_local + (len - min_local) % (u - 4);
            if k <= max_local {
                k
            } else {
                min_local
            }
        };
        let mut out = Vec::with_capacity(len);
        out.extend_from_slice(
            page.get(at..at + local)
                .ok_or_else(|| corrupt(page_no, "cell payload runs past page end"))?,
        );
        if local < len {
            let mut next = be_u32(page, at + local).ok_or_else(|| corrupt(page_no, "missing overflow pointer"))?;
            let mut hops = 0u32;
            while out.len() < len {
                hops += 1;
                if next == 0 || hops > self.page_count {
                    return Err(corrupt(page_no, "broken overflow chain"));
                }
                let overflow = self.page(next)?;
                let take = (len - out.len()).min(u - 4);
                out.extend_from_slice(&overflow[4..4 + take]);
                next = be_u32(overflow, 0).unwrap_or(0);
            }
        }
        Ok(out)
    }

    fn decode_record(&self, page_no: u32, payload: &[u8]) -> Result<Vec<Value>, SqliteError> {
        let bad = || corrupt(page_no, "malformed record");
        let (header_len, n) = read_varint(payload, 0).ok_or_else(bad)?;
        let header_len = header_len as usize;
        if header_len > payload.len() {
            return Err(bad());
        }
        let mut types = Vec::new();
        let mut pos = n;
        while pos < header_len {
            let (t, n) = read_varint(payload, pos).ok_or_else(bad)?;
            types.push(t);
            pos += n;
        }
        let mut body = header_len;
        let mut values = Vec::with_capacity(types.len());
        for t in types {
            let take = |body: &mut usize, len: usize| -> Result<&[u8], SqliteError> {
                let slice = payload.get(*body..*body + len).ok_or_else(bad)?;
                *body += len;
                Ok(slice)
            };
            let int = |bytes: &[u8]| -> i64 {
                let mut v: i64 = if bytes[0] & 0x80 != 0 { -1 } else { 0 };
                for b in bytes {
                    v = (v << 8) | i64::from(*b);
                }
                v
            };
            let value = match t {
                0 => Value::Null,
                1 => Value::Integer(int(take(&mut body, 1)?)),
                2 => Value::Integer(int(take(&mut body, 2)?)),
                3 => Value::Integer(int(take(&mut body, 3)?)),
                4 => Value::Integer(int(take(&mut body, 4)?)),
                5 => Value::Integer(int(take(&mut body, 6)?)),
                6 => Value::Integer(int(take(&mut body, 8)?)),
                7 => {
                    let b: [u8; 8] = take(&mut body, 8)?.try_into().unwrap();
                    Value::Real(f64::from_bits(u64::from_be_bytes(b)))
                }
                8 => Value::Integer(0),
                9 => Value::Integer(1),
                10 | 11 => return Err(corrupt(page_no, format!("reserved serial type {t}"))),
                t if t % 2 == 0 => Value::Blob(take(&mut body, ((t - 12) / 2) as usize)?.to_vec()),
                t => Value::Text(self.decode_text(take(&mut body, ((t - 13) / 2) as usize)?)),
            };
            values.push(value);
        }
        Ok(values)
    }

    /// Walks a b-tree in key order, calling `visit` with each leaf cell's
    /// rowid (table trees only) and record payload.
    fn walk_tree(&self, root: u32, visit: &mut dyn FnMut(Option<i64>, Vec<u8>, u32) -> Result<(), SqliteError>) -> Result<(), SqliteError> {
        let mut visited = BTreeSet::new();
        self.walk_page(root, 0, &mut visited, visit)
    }

    fn walk_page(
        &self,
        page_no: u32,
        depth: usize,
        visited: &mut BTreeSet<u32>,
        visit: &mut dyn FnMut(Option<i64>, Vec<u8>, u32) -> Result<(), SqliteError>,
    ) -> Result<(), SqliteError> {
        if depth > MAX_TREE_DEPTH || !visited.insert(page_no) {
            return Err(corrupt(page_no, "b-tree cycle or excessive depth"));
        }
        let page = self.page(page_no)?;
        let hdr = if page_no == 1 { 100 } else { 0 };
        let kind = match page[hdr] {
            0x02 => PageKind::InteriorIndex,
            0x05 => PageKind::InteriorTable,
            0x0a => PageKind::LeafIndex,
            0x0d => PageKind::LeafTable,
            other => return Err(corrupt(page_no, format!("unexpected b-tree page type {other:#04x}"))),
        };
        let interior = matches!(kind, PageKind::InteriorIndex | PageKind::InteriorTable);
        let cell_count = be_u16(page, hdr + 3).unwrap() as usize;
        let ptr_base = hdr + if interior { 12 } else { 8 };
        let bad = |m: &str| corrupt(page_no, m.to_string());

        for i in 0..cell_count {
            let at = be_u16(page, ptr_base + 2 * i).ok_or_else(|| bad("cell pointer array overflows page"))? as usize;
            if at >= self.usable {
                return Err(bad("cell pointer out of range"));
            }
            match kind {
                PageKind::LeafTable => {
                    let (len, n1) = read_varint(page, at).ok_or_else(|| bad("bad payload size"))?;
                    let (rowid, n2) = read_varint(page, at + n1).ok_or_else(|| bad("bad rowid"))?;
                    let payload = self.read_payload(page_no, page, at + n1 + n2, len as usize, true)?;
                    visit(Some(rowid as i64), payload, page_no)?;
                }
                PageKind::InteriorTable => {
                    let child = be_u32(page, at).ok_or_else(|| bad("bad child pointer"))?;
                    self.walk_page(child, depth + 1, visited, visit)?;
                }
                PageKind::LeafIndex => {
                    let (len, n1) = read_varint(page, at).ok_or_else(|| bad("bad payload size"))?;
                    let payload = self.read_payload(page_no, page, at + n1, len as usize, false)?;
                    visit(None, payload, page_no)?;
                }
                PageKind::InteriorIndex => {
                    let child = be_u32(page, at).ok_or_else(|| bad("bad child pointer"))?;
                    self.walk_page(child, depth + 1, visited, visit)?;
                    // interior index cells carry a key of their own
                    let (len, n1) = read_varint(page, at + 4).ok_or_else(|| bad("bad payload size"))?;
                    let payload = self.read_payload(page_no, page, at + 4 + n1, len as usize, false)?;
                    visit(None, payload, page_no)?;
                }
            }
        }
        if interior {
            let right = be_u32(page, hdr + 8).unwrap();
            self.walk_page(right, depth + 1, visited, visit)?;
        }
        Ok(())
    }

    fn scan_records(&self, root: u32) -> Result<Vec<Record>, SqliteError> {
        let mut out = Vec::new();
        self.walk_tree(root, &mut |rowid, payload, page_no| {
            out.push((rowid, self.decode_record(page_no, &payload)?));
            Ok(())
        })?;
        Ok(out)
    }

    pub fn schema(&self) -> Result<Vec<SchemaObject>, SqliteError> {
        if self.page_count == 0 {
            return Ok(Vec::new());
        }
        let mut objects = Vec::new();
        for (_, values) in self.scan_records(1)? {
            let text = |i: usize| match values.get(i) {
                Some(Value::Text(t)) => Some(t.clone()),
                _ => None,
            };
            let rootpage = match values.get(3) {
                Some(Value::Integer(n)) => *n as u32,
                _ => 0,
            };
            objects.push(SchemaObject {
                kind: text(0).unwrap_or_default(),
                name: text(1).unwrap_or_default(),
                tbl_name: text(2).unwrap_or_default(),
                rootpage,
                sql: text(4),
            });
        }
        Ok(objects)
    }

    pub fn table_names(&self) -> Result<Vec<String>, SqliteError> {
        Ok(self
            .schema()?
            .into_iter()
            .filter(|o| o.kind == "table")
            .map(|o| o.name)
            .collect())
    }

    /// Reads every row of a rowid table. Rowid-alias columns are filled in
    /// from the rowid and short records are padded with NULL.
    pub fn read_table(&self, name: &str) -> Result<TableRows, SqliteError> {
        let schema = self.schema()?;
        let object = schema
            .iter()
            .find(|o| o.kind == "table" && o.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| SqliteError::NoSuchTable {
                name: name.to_string(),
                available: schema.iter().filter(|o| o.kind == "table").map(|o| o.name.clone()).collect(),
            })?;
        let def = object
            .sql
            .as_deref()
            .and_then(parse_create_table)
            .ok_or_else(|| SqliteError::Unsupported(format!("cannot parse definition of table {name:?}")))?;
        if def.without_rowid {
            return Err(SqliteError::Unsupported(format!("WITHOUT ROWID table {name:?}")));
        }
        if object.rootpage == 0 {
            return Err(SqliteError::Unsupported(format!("virtual table {name:?}")));
        }
        let rows = self
            .scan_records(object.rootpage)?
            .into_iter()
            .map(|(rowid, mut values)| {
                values.resize(def.columns.len().max(values.len()), Value::Null);
                values.truncate(def.columns.len());
                for (i, col) in def.columns.iter().enumerate() {
                    if col.rowid_alias {
                        values[i] = Value::Integer(rowid.unwrap_or_default());
                    } else if let (true, Value::Integer(v)) = (col.real_affinity(), &values[i]) {
                        values[i] = Value::Real(*v as f64);
                    }
                }
                Row { rowid, values }
            })
            .collect();
        Ok(TableRows {
            name: object.name.clone(),
            columns: def.columns.into_iter().map(|c| c.name).collect(),
            rows,
        })
    }

    /// Logical content of every table. Rowids only take part through
    /// `INTEGER PRIMARY KEY` columns, so renumbering by VACUUM is invisible.
    pub fn logical_content(&self) -> Result<LogicalContent, SqliteError> {
        let mut content = LogicalContent::default();
        for object in self.schema()? {
            content
                .schema
                .insert((object.kind.clone(), object.name.clone(), object.tbl_name.clone(), object.sql.clone()));
            if object.kind != "table" || object.rootpage == 0 {
                continue;
            }
            let def = object.sql.as_deref().and_then(parse_create_table);
            let mut rows: Vec<Vec<String>> = match def {
                Some(def) if !def.without_rowid => self
                    .read_table(&object.name)?
                    .rows
                    .into_iter()
                    .map(|r| r.values.iter().map(Value::canonical).collect())
                    .collect(),
                // WITHOUT ROWID or unparsable definitions: compare raw records
                _ => self
                    .scan_records(object.rootpage)?
                    .into_iter()
                    .map(|(_, values)| values.iter().map(Value::canonical).collect())
                    .collect(),
            };
            rows.sort();
            content.tables.insert(object.name, rows);
        }
        Ok(content)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn varints() {
        assert_eq!(read_varint(&[0x00], 0), Some((0, 1)));
        assert_eq!(read_varint(&[0x7f], 0), Some((127, 1)));
        assert_eq!(read_varint(&[0x81, 0x00], 0), Some((128, 2)));
        assert_eq!(read_varint(&[0xff; 9], 0), Some((u64::MAX, 9)));
        assert_eq!(read_varint(&[0x81], 0), None);
    }

    #[test]
    fn canonical_values() {
        assert_eq!(Value::Null.canonical(), "NULL");
        assert_eq!(Value::Integer(-42).canonical(), "-42");
        assert_eq!(Value::Integer(7).canonical(), "7");
        assert_eq!(Value::Real(1.0).canonical(), "1.0");
        assert_eq!(Value::Real(0.1).canonical(), "0.1");
        assert_eq!(Value::Text("héllo".into()).canonical(), "héllo");
        assert_eq!(Value::Blob(vec![0xde, 0xad, 0x01]).canonical(), "dead01");
    }

    #[test]
    fn rejects_non_database() {
        assert!(matches!(Database::parse(b"TARBALL"), Err(SqliteError::NotDatabase)));
        assert!(matches!(Database::parse(&[0u8; 4096]), Err(SqliteError::NotDatabase)));
    }
}
