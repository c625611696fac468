//! Reference databases and settings files with matching backup carriers
//! (SMS archive, call log and settings key-value streams).

use std::collections::BTreeMap;
use std::fs;

use backupdiff_core::contentx::kv::{encode_settings_entity, CALLLOG_VERSION};
use backupdiff_core::contentx::{write_kv_stream, write_settings_xml, write_sms_backup, CallRecord};
use rand::seq::IndexedRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rusqlite::{params, Connection};
use serde_json::{json, Value as Json};

use crate::tree::FileTree;

pub const MMSSMS_DB: &str = "data/data/com.android.providers.telephony/databases/mmssms.db";
pub const CALLLOG_DB: &str = "data/data/com.android.providers.contacts/databases/calllog.db";
pub const SETTINGS_DIR: &str = "data/system/users/0";
pub const SETTINGS_FILES: [&str; 3] = ["config", "global", "secure"];
pub const SMS_MEMBER: &str = "apps/com.android.providers.telephony/d_f/000000_sms_backup";
pub const CALLLOG_MEMBER: &str = "apps/com.android.calllogbackup/k/com.android.calllogbackup.data";
pub const SETTINGS_MEMBER: &str = "apps/com.android.providers.settings/k/com.android.providers.settings.data";

/// Element counts on the reference side and in the backup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentCounts {
    pub sms: (usize, usize),
    pub calls: (usize, usize),
    pub settings: (usize, usize),
}

impl Default for ContentCounts {
    fn default() -> Self {
        ContentCounts {
            sms: (365, 56),
            calls: (101, 20),
            settings: (494, 51),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContentFixture {
    /// Device tree, paths relative to the device root.
    pub reference: FileTree,
    /// `.ab` tar members.
    pub backup_members: FileTree,
}

fn with_db(build: impl FnOnce(&Connection)) -> Vec<u8> {
    let dir = tempfile::tempdir().expect("scratch dir");
    let path = dir.path().join("fixture.db");
    let conn = Connection::open(&path).expect("open fixture db");
    conn.execute_batch("PRAGMA synchronous=OFF; BEGIN;").unwrap();
    build(&conn);
    conn.execute_batch("COMMIT;").unwrap();
    drop(conn);
    fs::read(&path).expect("fixture db readable")
}

fn phone(rng: &mut ChaCha8Rng) -> String {
    format!("+49151{:07}", rng.random_range(0..10_000_000))
}

fn words(rng: &mut ChaCha8Rng) -> String {
    const W: [&str; 10] = ["ok", "see you", "later", "call me", "on my way", "thanks", "yes", "no", "lunch?", "done"];
    (0..rng.random_range(1..5))
        .map(|_| *W.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn sms(rng: &mut ChaCha8Rng, counts: (usize, usize), members: &mut FileTree) -> Vec<u8> {
    let addresses: Vec<String> = (0..12).map(|_| phone(rng)).collect();
    // each thread has one or two recipients
    let threads: Vec<Vec<usize>> = (0..8)
        .map(|i| if i % 3 == 0 { vec![i, i + 1] } else { vec![i] })
        .collect();
    let mut backup_msgs: Vec<BTreeMap<String, Json>> = Vec::new();
    let db = with_db(|c| {
        c.execute_batch(
            "CREATE TABLE canonical_addresses (_id INTEGER PRIMARY KEY, address TEXT);
             CREATE TABLE threads (_id INTEGER PRIMARY KEY, date INTEGER DEFAULT 0, recipient_ids TEXT);
             CREATE TABLE sms (_id INTEGER PRIMARY KEY, thread_id INTEGER, address TEXT, person INTEGER,
                 date INTEGER, date_sent INTEGER DEFAULT 0, protocol INTEGER, read INTEGER DEFAULT 0,
                 status INTEGER DEFAULT -1, type INTEGER, body TEXT, seen INTEGER DEFAULT 0);",
        )
        .unwrap();
        for (i, a) in addresses.iter().enumerate() {
            c.execute("INSERT INTO canonical_addresses VALUES (?1, ?2)", params![i as i64 + 1, a])
                .unwrap();
        }
        for (t, ids) in threads.iter().enumerate() {
            let ids: Vec<String> = ids.iter().map(|i| (i + 1).to_string()).collect();
            c.execute(
                "INSERT INTO threads (_id, recipient_ids) VALUES (?1, ?2)",
                params![t as i64 + 1, ids.join(" ")],
            )
            .unwrap();
        }
        let mut date = 1_650_000_000_000i64;
        for id in 0..counts.0 {
            date += rng.random_range(1_000..90_000_000);
            let thread = rng.random_range(0..threads.len());
            let address = &addresses[threads[thread][0]];
            let (date_sent, read, status, kind) = (date - rng.random_range(0..5_000), 1, -1, rng.random_range(1..3));
            let body = words(rng);
            c.execute(
                "INSERT INTO sms (_id, thread_id, address, date, date_sent, read, status, type, body)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)",
                params![id as i64 + 1, thread as i64 + 1, address, date, date_sent, read, status, kind, body],
            )
            .unwrap();
            if id >= counts.0 - counts.1 {
                let recipients: Vec<&String> = threads[thread].iter().map(|i| &addresses[*i]).collect();
                backup_msgs.push(
                    serde_json::from_value(json!({
                        "self_phone": "", "address": address, "body": body, "date": date,
                        "date_sent": date_sent, "read": read, "status": status, "type": kind,
                        "recipients": recipients,
                    }))
                    .unwrap(),
                );
            }
        }
    });
    members.insert(SMS_MEMBER.into(), write_sms_backup(&backup_msgs));
    db
}

fn calls(rng: &mut ChaCha8Rng, counts: (usize, usize), members: &mut FileTree) -> Vec<u8> {
    let mut entities = Vec::new();
    let db = with_db(|c| {
        c.execute_batch(
            "CREATE TABLE calls (_id INTEGER PRIMARY KEY AUTOINCREMENT, number TEXT, presentation INTEGER NOT NULL DEFAULT 1,
                 post_dial_digits TEXT NOT NULL DEFAULT '', via_number TEXT NOT NULL DEFAULT '', date INTEGER,
                 duration INTEGER, data_usage INTEGER, type INTEGER, features INTEGER NOT NULL DEFAULT 0,
                 subscription_component_name TEXT, subscription_id TEXT, phone_account_address TEXT,
                 new INTEGER, name TEXT, block_reason INTEGER NOT NULL DEFAULT 0);",
        )
        .unwrap();
        let mut date = 1_650_000_000_000i64;
        for id in 1..=counts.0 as i64 {
            date += rng.random_range(60_000..50_000_000);
            let call = CallRecord {
                version: CALLLOG_VERSION,
                id,
                date,
                duration: rng.random_range(0..3600),
                number: Some(phone(rng)),
                call_type: rng.random_range(1..4),
                presentation: 1,
                subscription_component_name: Some(
                    "com.android.phone/com.android.services.telephony.TelephonyConnectionService".into(),
                ),
                subscription_id: Some(format!("8949{:015}", rng.random_range(0..1_000_000_000_000_000i64))),
                phone_account_address: Some(String::new()),
                data_usage: 0,
                features: 0,
                post_dial_digits: Some(String::new()),
                via_number: Some(String::new()),
                block_reason: Some(0),
            };
            c.execute(
                "INSERT INTO calls (_id, number, presentation, post_dial_digits, via_number, date, duration,
                     data_usage, type, features, subscription_component_name, subscription_id,
                     phone_account_address, new, block_reason)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12, ?13, 0, ?14)",
                params![
                    call.id,
                    call.number,
                    call.presentation,
                    call.post_dial_digits,
                    call.via_number,
                    call.date,
                    call.duration,
                    call.data_usage,
                    call.call_type,
                    call.features,
                    call.subscription_component_name,
                    call.subscription_id,
                    call.phone_account_address,
                    call.block_reason
                ],
            )
            .unwrap();
            if id as usize > counts.0 - counts.1 {
                entities.push((id.to_string(), call.encode()));
            }
        }
    });
    members.insert(CALLLOG_MEMBER.into(), write_kv_stream(&entities));
    db
}

fn settings(rng: &mut ChaCha8Rng, counts: (usize, usize), reference: &mut FileTree, members: &mut FileTree) {
    let mut entities = Vec::new();
    let mut remaining = (counts.0, counts.1);
    for (i, file) in SETTINGS_FILES.iter().enumerate() {
        let left = SETTINGS_FILES.len() - i;
        let n = if left == 1 { remaining.0 } else { remaining.0 / left };
        let k = if left == 1 { remaining.1 } else { remaining.1 / left };
        remaining = (remaining.0 - n, remaining.1 - k);
        let pairs: Vec<(String, Option<String>)> = (0..n)
            .map(|j| {
                let value = match rng.random_range(0..4) {
                    0 => None,
                    1 => Some(rng.random_range(0..2).to_string()),
                    2 => Some(rng.random_range(0..100_000).to_string()),
                    _ => Some(format!("{file}-value-{j}")),
                };
                (format!("{file}_key_{j:03}"), value)
            })
            .collect();
        reference.insert(format!("{SETTINGS_DIR}/settings_{file}.xml"), write_settings_xml(&pairs));
        entities.push((file.to_string(), encode_settings_entity(&pairs[..k])));
    }
    members.insert(SETTINGS_MEMBER.into(), write_kv_stream(&entities));
}

/// Reference databases and settings files, and backup members carrying a
/// subset of their content with unchanged values.
pub fn gen_content_fixture(seed: u64, counts: ContentCounts) -> ContentFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x434f_4e54);
    let mut reference = FileTree::new();
    let mut members = FileTree::new();
    let sms_db = sms(&mut rng, counts.sms, &mut members);
    reference.insert(MMSSMS_DB.into(), sms_db);
    let call_db = calls(&mut rng, counts.calls, &mut members);
    reference.insert(CALLLOG_DB.into(), call_db);
    settings(&mut rng, counts.settings, &mut reference, &mut members);
    members.insert("apps/com.android.calllogbackup/_manifest".into(), b"1\ncom.android.calllogbackup\n".to_vec());
    ContentFixture {
        reference,
        backup_members: members,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let c = ContentCounts {
            sms: (10, 3),
            calls: (5, 2),
            settings: (9, 4),
        };
        let a = gen_content_fixture(1, c);
        let b = gen_content_fixture(1, c);
        assert_eq!(a.reference, b.reference);
        assert_eq!(a.backup_members, b.backup_members);
        assert_eq!(a.reference.len(), 5);
    }
}
