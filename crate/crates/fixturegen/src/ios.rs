//! iOS backup directories: `Manifest.db` plus blobs named by fileID.

use std::fs;
use std::io;
use std::path::Path;

use backupdiff_core::pathmap::{compute_file_id, CONTAINER_METADATA_FILE};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rusqlite::{params, Connection};

use crate::tree::{gen_base_snapshot, FileTree};

pub const FIXTURE_BUNDLE: &str = "org.backupdiff.fixture";
const FLAG_FILE: i64 = 1;
const FLAG_DIRECTORY: i64 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IosRow {
    pub domain: String,
    pub relative_path: String,
    pub flags: i64,
    /// Blob content; `None` for directory rows.
    pub bytes: Option<Vec<u8>>,
}

impl IosRow {
    pub fn file(domain: &str, relative_path: &str, bytes: Vec<u8>) -> Self {
        IosRow {
            domain: domain.into(),
            relative_path: relative_path.into(),
            flags: FLAG_FILE,
            bytes: Some(bytes),
        }
    }

    pub fn file_id(&self) -> String {
        compute_file_id(&self.domain, &self.relative_path)
    }
}

/// A reference tree (paths relative to the device root) and the backup
/// rows taken from it.
#[derive(Debug, Clone)]
pub struct IosFixture {
    pub reference: FileTree,
    pub rows: Vec<IosRow>,
    /// Device path each file row must map to.
    pub expected_names: Vec<String>,
}

fn metadata_plist(bundle: &str) -> Vec<u8> {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <!DOCTYPE plist PUBLIC \"-//Apple//DTD PLIST 1.0//EN\" \"http://www.apple.com/DTDs/PropertyList-1.0.dtd\">\n\
         <plist version=\"1.0\">\n<dict>\n\
         \t<key>MCMMetadataIdentifier</key>\n\t<string>{bundle}</string>\n\
         </dict>\n</plist>\n"
    )
    .into_bytes()
}

fn uuid_like(rng: &mut ChaCha8Rng) -> String {
    let hex = |rng: &mut ChaCha8Rng, n: usize| -> String {
        (0..n).map(|_| char::from(b"0123456789ABCDEF"[rng.random_range(0..16)])).collect()
    };
    format!("{}-{}-{}-{}-{}", hex(rng, 8), hex(rng, 4), hex(rng, 4), hex(rng, 4), hex(rng, 12))
}

/// Splits a seeded tree between HomeDomain and one app container; every
/// third file stays out of the backup.
pub fn gen_ios_fixture(seed: u64, n_files: usize) -> IosFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x694f_535f);
    let base = gen_base_snapshot(seed, n_files);
    let container = format!("private/var/mobile/Containers/Data/Application/{}", uuid_like(&mut rng));
    let app_domain = format!("AppDomain-{FIXTURE_BUNDLE}");
    let mut reference = FileTree::new();
    reference.insert(format!("{container}/{CONTAINER_METADATA_FILE}"), metadata_plist(FIXTURE_BUNDLE));
    let mut rows = vec![
        IosRow {
            domain: "HomeDomain".into(),
            relative_path: "Library/Fixture".into(),
            flags: FLAG_DIRECTORY,
            bytes: None,
        },
        IosRow {
            domain: app_domain.clone(),
            relative_path: "Documents".into(),
            flags: FLAG_DIRECTORY,
            bytes: None,
        },
    ];
    let mut expected_names = Vec::new();
    for (i, (rel, bytes)) in base.into_iter().enumerate() {
        let (device, domain, relative) = if i % 2 == 0 {
            let relative = format!("Library/Fixture/{rel}");
            (format!("private/var/mobile/{relative}"), "HomeDomain".to_string(), relative)
        } else {
            let relative = format!("Documents/{rel}");
            (format!("{container}/{relative}"), app_domain.clone(), relative)
        };
        if i % 3 != 2 {
            rows.push(IosRow::file(&domain, &relative, bytes.clone()));
            expected_names.push(format!("/{device}"));
        }
        reference.insert(device, bytes);
    }
    expected_names.sort();
    IosFixture {
        reference,
        rows,
        expected_names,
    }
}

fn sql_err(e: rusqlite::Error) -> io::Error {
    io::Error::other(e.to_string())
}

/// Writes `Manifest.db` and the blobs under `dir`.
pub fn write_ios_backup(rows: &[IosRow], dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let db_path = dir.join("Manifest.db");
    if db_path.exists() {
        fs::remove_file(&db_path)?;
    }
    let conn = Connection::open(&db_path).map_err(sql_err)?;
    conn.execute_batch(
        "PRAGMA synchronous=OFF;
         CREATE TABLE Files (fileID TEXT PRIMARY KEY, domain TEXT, relativePath TEXT, flags INTEGER, file BLOB);
         CREATE INDEX FilesDomainIdx ON Files(domain);
         CREATE INDEX FilesRelativePathIdx ON Files(relativePath);
         CREATE TABLE Properties (key TEXT PRIMARY KEY, value BLOB);
         BEGIN;",
    )
    .map_err(sql_err)?;
    for row in rows {
        let id = row.file_id();
        conn.execute(
            "INSERT INTO Files VALUES (?1, ?2, ?3, ?4, ?5)",
            params![id, row.domain, row.relative_path, row.flags, Vec::<u8>::new()],
        )
        .map_err(sql_err)?;
        if let Some(bytes) = &row.bytes {
            let sub = dir.join(&id[..2]);
            fs::create_dir_all(&sub)?;
            fs::write(sub.join(&id), bytes)?;
        }
    }
    conn.execute_batch("COMMIT;").map_err(sql_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_and_blobs() {
        let fx = gen_ios_fixture(5, 12);
        assert_eq!(fx.rows.iter().filter(|r| r.flags == FLAG_FILE).count(), 8);
        assert_eq!(fx.reference.len(), 13);
        let dir = tempfile::tempdir().unwrap();
        write_ios_backup(&fx.rows, dir.path()).unwrap();
        for row in fx.rows.iter().filter(|r| r.bytes.is_some()) {
            let id = row.file_id();
            assert_eq!(&fs::read(dir.path().join(&id[..2]).join(&id)).unwrap(), row.bytes.as_ref().unwrap());
        }
    }
}
