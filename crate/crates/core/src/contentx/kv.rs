//! Key-value backup entity streams and the per-package payload decoders.
//!
//! Entity layout (little-endian header):
//!
//! ```text
//! u32  magic "Data" (0x61746144)
//! i32  key length
//! i32  data size
//! [u8] key, NUL, zero padding to a multiple of 4
//! [u8] data, zero padding to a multiple of 4
//! ```

use std::collections::BTreeMap;

use super::ContentError;

pub const ENTITY_MAGIC: u32 = 0x6174_6144;

/// Key and value of each entity, in stream order.
pub type KvPairs = Vec<(String, Vec<u8>)>;

/// Decodes every entity of a key-value stream in order. On a truncated
/// entity, returns the pairs decoded so far together with the error.
pub fn parse_kv_stream(blob: &[u8]) -> Result<KvPairs, (KvPairs, ContentError)> {
    let mut out: KvPairs = Vec::new();
    let mut at = 0usize;
    while at < blob.len() {
        let start = at;
        let truncated = |out: Vec<_>| (out, ContentError::TruncatedEntity { offset: start });
        if blob.len() - at < 12 {
            return Err(truncated(out));
        }
        let word = |i: usize| u32::from_le_bytes(blob[at + i..at + i + 4].try_into().unwrap());
        let (magic, key_len, data_size) = (word(0), word(4) as i32, word(8) as i32);
        if magic != ENTITY_MAGIC {
            return Err((
                out,
                ContentError::CorruptEntity {
                    offset: start,
                    reason: format!("bad entity magic {magic:#010x}"),
                },
            ));
        }
        if key_len < 0 || data_size < 0 {
            return Err((
                out,
                ContentError::CorruptEntity {
                    offset: start,
                    reason: format!("negative size (key {key_len}, data {data_size})"),
                },
            ));
        }
        at += 12;
        let key_len = key_len as usize;
        let key_span = (key_len + 1).next_multiple_of(4);
        if blob.len() - at < key_len {
            return Err(truncated(out));
        }
        let key = String::from_utf8_lossy(&blob[at..at + key_len]).into_owned();
        at = (at + key_span).min(blob.len());
        let data_size = data_size as usize;
        if blob.len() - at < data_size {
            return Err(truncated(out));
        }
        let data = blob[at..at + data_size].to_vec();
        at = (at + data_size.next_multiple_of(4)).min(blob.len());
        // keys are unique; a repeated key replaces the earlier payload
        if let Some(slot) = out.iter_mut().find(|(k, _)| *k == key) {
            slot.1 = data;
        } else {
            out.push((key, data));
        }
    }
    Ok(out)
}

/// Encodes entities in the stream layout read by [`parse_kv_stream`].
pub fn write_kv_stream(entities: &[(String, Vec<u8>)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (key, data) in entities {
        out.extend_from_slice(&ENTITY_MAGIC.to_le_bytes());
        out.extend_from_slice(&(key.len() as i32).to_le_bytes());
        out.extend_from_slice(&(data.len() as i32).to_le_bytes());
        out.extend_from_slice(key.as_bytes());
        out.push(0);
        while out.len() % 4 != 0 {
            out.push(0);
        }
        out.extend_from_slice(data);
        while out.len() % 4 != 0 {
            out.push(0);
        }
    }
    out
}

/// Big-endian reader in the style of `java.io.DataInputStream`.
struct JavaReader<'a> {
    data: &'a [u8],
    at: usize,
}

impl<'a> JavaReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContentError> {
        if self.data.len() - self.at < n {
            return Err(ContentError::Payload(format!("payload ends at byte {}", self.data.len())));
        }
        let s = &self.data[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn i32(&mut self) -> Result<i32, ContentError> {
        Ok(i32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, ContentError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bool(&mut self) -> Result<bool, ContentError> {
        Ok(self.take(1)?[0] != 0)
    }
    fn utf(&mut self) -> Result<String, ContentError> {
        let len = u16::from_be_bytes(self.take(2)?.try_into().unwrap()) as usize;
        Ok(String::from_utf8_lossy(self.take(len)?).into_owned())
    }
    fn optional_utf(&mut self) -> Result<Option<String>, ContentError> {
        if self.bool()? {
            Ok(Some(self.utf()?))
        } else {
            Ok(None)
        }
    }
}

struct JavaWriter(Vec<u8>);

impl JavaWriter {
    fn i32(&mut self, v: i32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn utf(&mut self, s: &str) {
        self.0.extend_from_slice(&(s.len() as u16).to_be_bytes());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn optional_utf(&mut self, s: Option<&str>) {
        self.0.push(u8::from(s.is_some()));
        if let Some(s) = s {
            self.utf(s);
        }
    }
}

/// One call log entry as carried by the call log backup agent.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CallRecord {
    pub version: i32,
    pub id: i64,
    pub date: i64,
    pub duration: i64,
    pub number: Option<String>,
    pub call_type: i32,
    pub presentation: i32,
    pub subscription_component_name: Option<String>,
    pub subscription_id: Option<String>,
    pub phone_account_address: Option<String>,
    pub data_usage: i64,
    pub features: i32,
    pub post_dial_digits: Option<String>,
    pub via_number: Option<String>,
    pub block_reason: Option<i32>,
}

pub const CALLLOG_VERSION: i32 = 1005;

fn text(v: &Option<String>) -> String {
    v.clone().unwrap_or_else(|| "NULL".to_string())
}

impl CallRecord {
    /// Canonical column values under `calls` table column names.
    pub fn columns(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("_id".into(), self.id.to_string());
        m.insert("number".into(), text(&self.number));
        m.insert("presentation".into(), self.presentation.to_string());
        m.insert("date".into(), self.date.to_string());
        m.insert("duration".into(), self.duration.to_string());
        m.insert("type".into(), self.call_type.to_string());
        m.insert("subscription_component_name".into(), text(&self.subscription_component_name));
        m.insert("subscription_id".into(), text(&self.subscription_id));
        m.insert("phone_account_address".into(), text(&self.phone_account_address));
        m.insert("data_usage".into(), self.data_usage.to_string());
        m.insert("features".into(), self.features.to_string());
        if self.version >= 1002 {
            m.insert("post_dial_digits".into(), text(&self.post_dial_digits));
        }
        if self.version >= 1003 {
            m.insert("via_number".into(), text(&self.via_number));
        }
        if let Some(reason) = self.block_reason {
            m.insert("block_reason".into(), reason.to_string());
        }
        m
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = JavaWriter(Vec::new());
        w.i32(self.version);
        w.i64(self.date);
        w.i64(self.duration);
        w.optional_utf(self.number.as_deref());
        w.i32(self.call_type);
        w.i32(self.presentation);
        w.optional_utf(self.subscription_component_name.as_deref());
        w.optional_utf(self.subscription_id.as_deref());
        w.optional_utf(self.phone_account_address.as_deref());
        w.i64(self.data_usage);
        w.i32(self.features);
        if self.version >= 1002 {
            w.optional_utf(self.post_dial_digits.as_deref());
        }
        if self.version >= 1003 {
            w.optional_utf(self.via_number.as_deref());
        }
        if self.version >= 1005 {
            w.i32(self.block_reason.unwrap_or(0));
        }
        w.0
    }
}

/// Decodes one call log entity. The entity key is the row `_id`.
pub fn decode_calllog_entity(key: &str, payload: &[u8]) -> Result<CallRecord, ContentError> {
    let id = key
        .parse::<i64>()
        .map_err(|_| ContentError::Payload(format!("call log key {key:?} is not an _id")))?;
    let mut r = JavaReader { data: payload, at: 0 };
    let version = r.i32()?;
    let mut call = CallRecord {
        version,
        id,
        date: r.i64()?,
        duration: r.i64()?,
        number: r.optional_utf()?,
        call_type: r.i32()?,
        presentation: r.i32()?,
        subscription_component_name: r.optional_utf()?,
        subscription_id: r.optional_utf()?,
        phone_account_address: r.optional_utf()?,
        data_usage: r.i64()?,
        features: r.i32()?,
        ..Default::default()
    };
    if version >= 1002 {
        call.post_dial_digits = r.optional_utf()?;
    }
    if version >= 1003 {
        call.via_number = r.optional_utf()?;
    }
    if version >= 1005 {
        call.block_reason = Some(r.i32()?);
    }
    Ok(call)
}

/// Decodes a settings entity: repeated (i32 length, key bytes, i32 length,
/// value bytes), big-endian. A negative value length stands for NULL.
pub fn decode_settings_entity(payload: &[u8]) -> Result<Vec<(String, Option<String>)>, ContentError> {
    let mut r = JavaReader { data: payload, at: 0 };
    let mut out = Vec::new();
    while r.at < payload.len() {
        let key_len = r.i32()?;
        if key_len < 0 {
            return Err(ContentError::Payload(format!("negative key length at byte {}", r.at - 4)));
        }
        let key = String::from_utf8_lossy(r.take(key_len as usize)?).into_owned();
        let value_len = r.i32()?;
        let value = if value_len < 0 {
            None
        } else {
            Some(String::from_utf8_lossy(r.take(value_len as usize)?).into_owned())
        };
        out.push((key, value));
    }
    Ok(out)
}

pub fn encode_settings_entity(settings: &[(String, Option<String>)]) -> Vec<u8> {
    let mut w = JavaWriter(Vec::new());
    for (key, value) in settings {
        w.i32(key.len() as i32);
        w.0.extend_from_slice(key.as_bytes());
        match value {
            Some(v) => {
                w.i32(v.len() as i32);
                w.0.extend_from_slice(v.as_bytes());
            }
            None => w.i32(-1),
        }
    }
    w.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream() {
        assert_eq!(parse_kv_stream(&[]).unwrap(), vec![]);
    }

    #[test]
    fn layout_is_padded() {
        let bytes = write_kv_stream(&[("ab".into(), vec![1, 2, 3, 4, 5])]);
        // 12 header + "ab\0" padded to 4 + 5 data padded to 8
        assert_eq!(bytes.len(), 12 + 4 + 8);
        assert_eq!(&bytes[..4], b"Data");
        assert_eq!(parse_kv_stream(&bytes).unwrap(), vec![("ab".to_string(), vec![1, 2, 3, 4, 5])]);
    }

    #[test]
    fn truncated_last_entity() {
        let entities: Vec<(String, Vec<u8>)> = (0..3).map(|i| (format!("{i}"), vec![i as u8; 10])).collect();
        let bytes = write_kv_stream(&entities);
        let cut = &bytes[..bytes.len() - 6];
        let (partial, err) = parse_kv_stream(cut).unwrap_err();
        assert_eq!(partial, entities[..2]);
        let second_end = write_kv_stream(&entities[..2]).len();
        assert!(matches!(err, ContentError::TruncatedEntity { offset } if offset == second_end));
    }

    #[test]
    fn negative_size_is_corrupt() {
        let mut bytes = write_kv_stream(&[("k".into(), vec![1])]);
        bytes[8..12].copy_from_slice(&(-1i32).to_le_bytes());
        assert!(matches!(parse_kv_stream(&bytes), Err((_, ContentError::CorruptEntity { .. }))));
    }

    #[test]
    fn calllog_round_trip_by_version() {
        for version in [1001, 1002, 1003, 1005] {
            let call = CallRecord {
                version,
                id: 17,
                date: 1_650_000_000_000,
                duration: 42,
                number: Some("+4917012345".into()),
                call_type: 2,
                presentation: 1,
                subscription_id: Some("8949".into()),
                post_dial_digits: (version >= 1002).then(String::new),
                via_number: (version >= 1003).then(String::new),
                block_reason: (version >= 1005).then_some(0),
                ..Default::default()
            };
            let decoded = decode_calllog_entity("17", &call.encode()).unwrap();
            assert_eq!(decoded, call);
        }
        assert!(decode_calllog_entity("x", &[]).is_err());
        assert!(decode_calllog_entity("1", &[0, 0, 3]).is_err());
    }

    #[test]
    fn settings_entity_round_trip() {
        let settings = vec![("adb_enabled".to_string(), Some("1".to_string())), ("x".to_string(), None)];
        assert_eq!(decode_settings_entity(&encode_settings_entity(&settings)).unwrap(), settings);
    }
}
