//! SMS backup archives: a deflate-compressed JSON array of message objects.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use flate2::read::{DeflateDecoder, ZlibDecoder};
use flate2::write::ZlibEncoder;
use flate2::Compression;
use serde_json::Value as Json;

use super::ContentError;

/// Message fields carried into the comparison; anything else is ignored.
pub const SMS_FIELDS: [&str; 8] = ["address", "body", "date", "date_sent", "read", "status", "type", "recipients"];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SmsBackup {
    /// Canonical field values per message, in archive order.
    pub messages: Vec<BTreeMap<String, String>>,
    /// Number of expected fields absent from some message.
    pub omitted_fields: usize,
}

impl SmsBackup {
    /// `msg/<index>/<field>` pairs.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.messages
            .iter()
            .enumerate()
            .flat_map(|(i, m)| m.iter().map(move |(f, v)| (format!("msg/{i}/{f}"), v.clone())))
            .collect()
    }
}

fn canonical_json(v: &Json) -> String {
    match v {
        Json::Null => "NULL".into(),
        Json::Bool(b) => u8::from(*b).to_string(),
        Json::Number(n) => n.to_string(),
        Json::String(s) => s.clone(),
        Json::Array(items) => items.iter().map(canonical_json).collect::<Vec<_>>().join(","),
        Json::Object(_) => v.to_string(),
    }
}

fn inflate(archive: &[u8]) -> Result<Vec<u8>, ContentError> {
    let mut out = Vec::new();
    if ZlibDecoder::new(archive).read_to_end(&mut out).is_ok() {
        return Ok(out);
    }
    out.clear();
    if DeflateDecoder::new(archive).read_to_end(&mut out).is_ok() && !out.is_empty() {
        return Ok(out);
    }
    Err(ContentError::NotArchive)
}

pub fn parse_sms_backup(archive: &[u8]) -> Result<SmsBackup, ContentError> {
    let json = inflate(archive)?;
    let doc: Json = serde_json::from_slice(&json).map_err(|e| ContentError::Json(e.to_string()))?;
    let Json::Array(items) = doc else {
        return Err(ContentError::Json("top level is not an array of messages".into()));
    };
    let mut backup = SmsBackup::default();
    for item in items {
        let Json::Object(obj) = item else {
            return Err(ContentError::Json("message is not an object".into()));
        };
        let mut fields = BTreeMap::new();
        for field in SMS_FIELDS {
            match obj.get(field) {
                Some(v) => {
                    fields.insert(field.to_string(), canonical_json(v));
                }
                None => backup.omitted_fields += 1,
            }
        }
        backup.messages.push(fields);
    }
    Ok(backup)
}

/// Writes messages in the archive shape. Fields holding lists (recipients)
/// are given as comma separated text and written as JSON arrays.
pub fn write_sms_backup(messages: &[BTreeMap<String, Json>]) -> Vec<u8> {
    let json = serde_json::to_vec(messages).expect("messages serialize");
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&json).expect("in-memory write");
    enc.finish().expect("in-memory write")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn message(extra: bool) -> BTreeMap<String, Json> {
        let mut m: BTreeMap<String, Json> = serde_json::from_value(json!({
            "address": "+4915100000", "body": "hi", "date": 1650000000123i64,
            "date_sent": 1650000000000i64, "read": 1, "status": -1, "type": 1,
            "recipients": ["+4915100000", "+4915100001"]
        }))
        .unwrap();
        if extra {
            m.insert("self_phone".into(), json!("x"));
        }
        m
    }

    #[test]
    fn empty_archive() {
        let b = parse_sms_backup(&write_sms_backup(&[])).unwrap();
        assert!(b.messages.is_empty());
    }

    #[test]
    fn fields_and_extras() {
        let b = parse_sms_backup(&write_sms_backup(&[message(true), message(false)])).unwrap();
        assert_eq!(b.messages.len(), 2);
        assert_eq!(b.messages[0], b.messages[1]);
        assert_eq!(b.messages[0]["recipients"], "+4915100000,+4915100001");
        assert_eq!(b.messages[0]["status"], "-1");
        assert_eq!(b.pairs().len(), 16);
        assert!(b.pairs().iter().any(|(n, v)| n == "msg/1/body" && v == "hi"));
    }

    #[test]
    fn missing_field_is_counted() {
        let mut m = message(false);
        m.remove("date_sent");
        let b = parse_sms_backup(&write_sms_backup(&[m])).unwrap();
        assert_eq!(b.omitted_fields, 1);
        assert_eq!(b.messages[0].len(), 7);
    }

    #[test]
    fn raw_deflate_and_garbage() {
        let json = serde_json::to_vec(&[message(false)]).unwrap();
        let mut enc = flate2::write::DeflateEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&json).unwrap();
        let raw = enc.finish().unwrap();
        assert_eq!(parse_sms_backup(&raw).unwrap().messages.len(), 1);
        assert!(matches!(parse_sms_backup(b"\xff\xfe not deflate"), Err(ContentError::NotArchive)));
    }
}
