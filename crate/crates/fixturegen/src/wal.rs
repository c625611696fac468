//! Databases with committed but not yet checkpointed WAL frames.

use std::fs;
use std::path::Path;

use backupdiff_core::sqlite::wal::rewrite_salts;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rusqlite::{params, Connection};

/// Bytes of one WAL scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalFixture {
    /// Main database file as left on disk while the WAL is live.
    pub db: Vec<u8>,
    /// The WAL sidecar.
    pub wal: Vec<u8>,
    /// `db` after SQLite checkpointed `wal` into it.
    pub checkpointed: Vec<u8>,
    /// `checkpointed` plus a row that appears in neither `db` nor `wal`.
    pub planted: Vec<u8>,
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).expect("fixture file readable")
}

fn random_name(rng: &mut ChaCha8Rng) -> String {
    (0..rng.random_range(3..24))
        .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
        .collect()
}

/// Deterministic in `seed`: the random WAL salts SQLite picks are replaced
/// by seed-derived ones.
pub fn gen_wal_fixture(seed: u64) -> WalFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5741_4c5f_4649_5854);
    let scratch = tempfile::tempdir().expect("scratch dir");
    let live = scratch.path().join("live.db");
    let conn = Connection::open(&live).expect("open fixture db");
    conn.execute_batch(
        "PRAGMA page_size=1024;
         PRAGMA synchronous=OFF;
         PRAGMA journal_mode=WAL;
         PRAGMA wal_autocheckpoint=0;
         CREATE TABLE items(id INTEGER PRIMARY KEY, name TEXT NOT NULL, score REAL, payload BLOB);",
    )
    .expect("schema");
    let base_rows = rng.random_range(5..40);
    for id in 1..=base_rows {
        let payload: Vec<u8> = (0..rng.random_range(0..200)).map(|_| rng.random()).collect();
        conn.execute(
            "INSERT INTO items VALUES (?1, ?2, ?3, ?4)",
            params![id, random_name(&mut rng), rng.random_range(0.0..100.0f64), payload],
        )
        .expect("insert");
    }
    conn.execute_batch("PRAGMA wal_checkpoint(TRUNCATE);").expect("checkpoint");

    let mut next_id = base_rows + 1;
    for _ in 0..rng.random_range(1..=4) {
        let tx = conn.unchecked_transaction().expect("begin");
        for k in 0..rng.random_range(1..6) {
            // every transaction writes at least one frame
            match if k == 0 { 0 } else { rng.random_range(0..3) } {
                0 => {
                    tx.execute(
                        "INSERT INTO items VALUES (?1, ?2, ?3, NULL)",
                        params![next_id, random_name(&mut rng), rng.random_range(0.0..100.0f64)],
                    )
                    .expect("insert");
                    next_id += 1;
                }
                1 => {
                    tx.execute(
                        "UPDATE items SET name = ?1 WHERE id = ?2",
                        params![random_name(&mut rng), rng.random_range(1..next_id)],
                    )
                    .expect("update");
                }
                _ => {
                    tx.execute("DELETE FROM items WHERE id = ?1", params![rng.random_range(1..next_id)])
                        .expect("delete");
                }
            }
        }
        tx.commit().expect("commit");
    }
    let db = read(&live);
    let mut wal = read(&scratch.path().join("live.db-wal"));
    rewrite_salts(&mut wal, rng.random(), rng.random()).expect("fixture WAL parses");
    drop(conn);

    let copy = scratch.path().join("copy.db");
    fs::write(&copy, &db).unwrap();
    fs::write(scratch.path().join("copy.db-wal"), &wal).unwrap();
    let conn = Connection::open(&copy).expect("open copy");
    conn.execute_batch("PRAGMA synchronous=OFF; PRAGMA wal_checkpoint(TRUNCATE); PRAGMA journal_mode=DELETE;")
        .expect("checkpoint copy");
    drop(conn);
    let checkpointed = read(&copy);

    let conn = Connection::open(&copy).expect("reopen copy");
    conn.execute_batch("PRAGMA synchronous=OFF;").unwrap();
    conn.execute(
        "INSERT INTO items VALUES (?1, 'planted', -1.0, NULL)",
        params![next_id + 1000],
    )
    .expect("plant row");
    drop(conn);
    let planted = read(&copy);

    WalFixture {
        db,
        wal,
        checkpointed,
        planted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_nonempty() {
        let a = gen_wal_fixture(3);
        assert_eq!(a, gen_wal_fixture(3));
        assert!(a.wal.len() > 32);
        assert_ne!(a.db, a.checkpointed);
    }
}
