//! The in-crate SQLite reader and WAL merge checked against the bundled
//! SQLite library.

use backupdiff_core::sqlite::{merge_wal, Database, Value};
use rusqlite::{types::ValueRef, Connection};

fn canonical(v: ValueRef<'_>) -> String {
    match v {
        ValueRef::Null => "NULL".into(),
        ValueRef::Integer(i) => i.to_string(),
        ValueRef::Real(f) => format!("{f:?}"),
        ValueRef::Text(t) => String::from_utf8(t.to_vec()).unwrap(),
        ValueRef::Blob(b) => hex::encode(b),
    }
}

fn oracle_rows(conn: &Connection, table: &str) -> Vec<Vec<String>> {
    let mut stmt = conn.prepare(&format!("SELECT * FROM \"{table}\" ORDER BY rowid")).unwrap();
    let n = stmt.column_count();
    let mut rows: Vec<Vec<String>> = stmt
        .query_map([], |row| Ok((0..n).map(|i| canonical(row.get_ref(i).unwrap())).collect()))
        .unwrap()
        .map(Result::unwrap)
        .collect();
    rows.sort();
    rows
}

fn reader_rows(bytes: &[u8], table: &str) -> Vec<Vec<String>> {
    let db = Database::parse(bytes).unwrap();
    let mut rows: Vec<Vec<String>> = db
        .read_table(table)
        .unwrap()
        .rows
        .iter()
        .map(|r| r.values.iter().map(Value::canonical).collect())
        .collect();
    rows.sort();
    rows
}

fn pseudo_random(seed: &mut u64) -> u64 {
    *seed ^= *seed << 13;
    *seed ^= *seed >> 7;
    *seed ^= *seed << 17;
    *seed
}

#[test]
fn table_scan_matches_sqlite() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.db");
    let conn = Connection::open(&path).unwrap();
    conn.execute_batch(
        "PRAGMA page_size=1024;
         CREATE TABLE sms(_id INTEGER PRIMARY KEY, address TEXT, body TEXT, date INTEGER, score REAL, raw BLOB);
         CREATE INDEX sms_date ON sms(date);
         CREATE TABLE kv(k TEXT PRIMARY KEY, v) WITHOUT ROWID;",
    )
    .unwrap();
    let mut seed = 0x9e37_79b9_7f4a_7c15u64;
    for i in 0..600 {
        let body_len = (pseudo_random(&mut seed) % 5000) as usize;
        let body: String = (0..body_len)
            .map(|j| char::from(b'a' + ((j as u64 + pseudo_random(&mut seed)) % 26) as u8))
            .collect();
        let raw: Vec<u8> = (0..(pseudo_random(&mut seed) % 3000)).map(|j| j as u8).collect();
        let score: Option<f64> = if i % 7 == 0 { None } else { Some(i as f64 / 3.0) };
        conn.execute(
            "INSERT INTO sms(address, body, date, score, raw) VALUES (?1, ?2, ?3, ?4, ?5)",
            rusqlite::params![format!("+49{i:08}"), body, -(i as i64) * 1_000_003, score, raw],
        )
        .unwrap();
        conn.execute(
            "INSERT INTO kv VALUES (?1, ?2)",
            rusqlite::params![format!("key{i:04}"), "ünïcødé".repeat(i % 5)],
        )
        .unwrap();
    }
    conn.execute("ALTER TABLE sms ADD COLUMN late TEXT DEFAULT 'x'", []).unwrap();
    conn.execute("DELETE FROM sms WHERE _id % 11 = 0", []).unwrap();
    let expected = oracle_rows(&conn, "sms");
    drop(conn);

    let bytes = std::fs::read(&path).unwrap();
    let db = Database::parse(&bytes).unwrap();
    assert_eq!(db.page_size(), 1024);
    // columns added later are absent from old records and read as NULL
    // here, while SQLite substitutes the default; compare the prefix
    let got: Vec<Vec<String>> = reader_rows(&bytes, "sms")
        .into_iter()
        .map(|mut r| {
            r.pop();
            r
        })
        .collect();
    let expected: Vec<Vec<String>> = expected
        .into_iter()
        .map(|mut r| {
            r.pop();
            r
        })
        .collect();
    assert_eq!(got.len(), expected.len());
    for (g, e) in got.iter().zip(&expected) {
        for (col, (a, b)) in g.iter().zip(e).enumerate() {
            assert!(a == b, "row {} column {col}: {:.60} != {:.60}", e[0], a, b);
        }
    }

    let content = db.logical_content().unwrap();
    assert_eq!(content.row_count("kv"), 600);
    assert!(db.table_names().unwrap().contains(&"sms".to_string()));
}

#[test]
fn wal_merge_matches_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.db");
    let conn = Connection::open(&path).unwrap();
    conn.pragma_update(None, "journal_mode", "WAL").unwrap();
    conn.pragma_update(None, "wal_autocheckpoint", 0).unwrap();
    conn.execute_batch("CREATE TABLE t(id INTEGER PRIMARY KEY, v TEXT); PRAGMA wal_checkpoint(TRUNCATE);")
        .unwrap();
    for i in 0..50 {
        conn.execute("INSERT INTO t(v) VALUES (?1)", [format!("row {i}").repeat(i)]).unwrap();
    }
    conn.execute("UPDATE t SET v = 'changed' WHERE id = 3", []).unwrap();
    conn.execute("DELETE FROM t WHERE id = 4", []).unwrap();

    let db_bytes = std::fs::read(&path).unwrap();
    let wal_bytes = std::fs::read(dir.path().join("w.db-wal")).unwrap();
    assert!(!wal_bytes.is_empty());

    conn.query_row("PRAGMA wal_checkpoint(TRUNCATE)", [], |_| Ok(())).unwrap();
    let expected = oracle_rows(&conn, "t");
    drop(conn);

    let merged = merge_wal(&db_bytes, &wal_bytes).unwrap();
    assert!(merged.commits >= 52);
    assert_eq!(reader_rows(&merged.bytes, "t"), expected);
    let checkpointed = std::fs::read(&path).unwrap();
    assert_eq!(
        Database::parse(&merged.bytes).unwrap().logical_content().unwrap(),
        Database::parse(&checkpointed).unwrap().logical_content().unwrap()
    );
    // the unmerged main file knows nothing about the rows
    assert_eq!(reader_rows(&db_bytes, "t").len(), 0);
}
