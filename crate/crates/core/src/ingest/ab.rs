//! Android backup (`.ab`) container.
//!
//! The container is a short text header followed by the payload:
//!
//! ```text
//! ANDROID BACKUP\n
//! <version>\n
//! <compressed: 0|1>\n
//! <encryption: none|AES-256>\n
//! <payload: tar, zlib-deflated when compressed>
//! ```

use std::io::{BufRead, BufReader, Read};

use flate2::read::ZlibDecoder;
use serde::Serialize;

use super::IngestError;

pub const AB_MAGIC: &str = "ANDROID BACKUP";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AbHeader {
    pub version: u32,
    pub compressed: bool,
    pub encryption: String,
}

fn read_line<R: BufRead>(reader: &mut R, what: &str) -> Result<String, IngestError> {
    let mut line = Vec::new();
    // header lines are short; cap the read so binary garbage fails fast
    let n = reader
        .take(256)
        .read_until(b'\n', &mut line)
        .map_err(|e| IngestError::Read(e.to_string()))?;
    if n == 0 || line.last() != Some(&b'\n') {
        return Err(IngestError::NotAndroidBackup(format!("missing {what} line")));
    }
    line.pop();
    String::from_utf8(line).map_err(|_| IngestError::NotAndroidBackup(format!("{what} line is not text")))
}

/// Parses the header and returns a reader over the inner tar stream.
pub fn open_android_backup<'a, R: Read + 'a>(reader: R) -> Result<(AbHeader, Box<dyn Read + 'a>), IngestError> {
    let mut reader = BufReader::new(reader);
    let magic = read_line(&mut reader, "magic")?;
    if magic != AB_MAGIC {
        return Err(IngestError::NotAndroidBackup(format!("bad magic {magic:?}")));
    }
    let version = read_line(&mut reader, "version")?
        .trim()
        .parse::<u32>()
        .map_err(|_| IngestError::NotAndroidBackup("bad version line".into()))?;
    let compressed = match read_line(&mut reader, "compression")?.trim() {
        "0" => false,
        "1" => true,
        other => return Err(IngestError::NotAndroidBackup(format!("bad compression flag {other:?}"))),
    };
    let encryption = read_line(&mut reader, "encryption")?.trim().to_string();
    if encryption != "none" {
        return Err(IngestError::UnsupportedEncryption(encryption));
    }
    let header = AbHeader {
        version,
        compressed,
        encryption,
    };
    let payload: Box<dyn Read + 'a> = if compressed {
        Box::new(ZlibDecoder::new(reader))
    } else {
        Box::new(reader)
    };
    Ok((header, payload))
}

/// Unwraps an unencrypted `.ab` file into its tar bytes.
pub fn unwrap_android_backup(bytes: &[u8]) -> Result<(AbHeader, Vec<u8>), IngestError> {
    let (header, mut payload) = open_android_backup(bytes)?;
    let mut tar = Vec::new();
    payload
        .read_to_end(&mut tar)
        .map_err(|e| IngestError::CorruptPayload(e.to_string()))?;
    Ok((header, tar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::{write::ZlibEncoder, Compression};
    use std::io::Write;

    fn wrap(tar: &[u8], compressed: bool, encryption: &str) -> Vec<u8> {
        let mut out = format!("ANDROID BACKUP\n5\n{}\n{encryption}\n", u8::from(compressed)).into_bytes();
        if compressed {
            let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
            enc.write_all(tar).unwrap();
            out.extend(enc.finish().unwrap());
        } else {
            out.extend_from_slice(tar);
        }
        out
    }

    #[test]
    fn round_trip_compressed_and_raw() {
        let tar = b"pretend tar bytes\0\0\0".repeat(40);
        for compressed in [true, false] {
            let (header, out) = unwrap_android_backup(&wrap(&tar, compressed, "none")).unwrap();
            assert_eq!(out, tar);
            assert_eq!(header.version, 5);
            assert_eq!(header.compressed, compressed);
        }
    }

    #[test]
    fn wrong_magic() {
        assert!(matches!(
            unwrap_android_backup(b"TARBALL\0\0\0"),
            Err(IngestError::NotAndroidBackup(_))
        ));
        assert!(matches!(unwrap_android_backup(b""), Err(IngestError::NotAndroidBackup(_))));
    }

    #[test]
    fn encrypted_is_unsupported() {
        let bytes = wrap(b"x", true, "AES-256");
        assert!(matches!(
            unwrap_android_backup(&bytes),
            Err(IngestError::UnsupportedEncryption(alg)) if alg == "AES-256"
        ));
    }

    #[test]
    fn garbage_payload_is_corrupt() {
        let mut bytes = b"ANDROID BACKUP\n5\n1\nnone\n".to_vec();
        bytes.extend_from_slice(b"definitely not zlib");
        assert!(matches!(unwrap_android_backup(&bytes), Err(IngestError::CorruptPayload(_))));
    }
}
