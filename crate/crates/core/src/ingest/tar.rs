//! Streaming POSIX tar reader (ustar, GNU long names, pax path records).

use std::io::{self, Read};

use super::IngestError;

const BLOCK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberKind {
    Regular,
    Directory,
    Symlink,
    HardLink,
    /// Character/block devices and FIFOs.
    Special,
    Other(u8),
}

#[derive(Debug, Clone)]
pub struct TarMember {
    pub path: String,
    pub kind: MemberKind,
    pub link_target: String,
    pub data: Vec<u8>,
    /// Byte offset of the member's (first) header block.
    pub offset: u64,
}

pub struct TarReader<R> {
    inner: R,
    offset: u64,
    finished: bool,
}

fn parse_octal(field: &[u8]) -> Option<u64> {
    // GNU base-256 for values that do not fit in octal
    if field.first().is_some_and(|b| b & 0x80 != 0) {
        let mut v: u64 = u64::from(field[0] & 0x7f);
        for b in &field[1..] {
            v = v.checked_mul(256)?.checked_add(u64::from(*b))?;
        }
        return Some(v);
    }
    let text: Vec<u8> = field
        .iter()
        .copied()
        .skip_while(|b| *b == b' ')
        .take_while(|b| *b != 0 && *b != b' ')
        .collect();
    if text.is_empty() {
        return Some(0);
    }
    u64::from_str_radix(std::str::from_utf8(&text).ok()?, 8).ok()
}

fn cstr(field: &[u8]) -> String {
    let end = field.iter().position(|b| *b == 0).unwrap_or(field.len());
    String::from_utf8_lossy(&field[..end]).into_owned()
}

fn checksum_ok(header: &[u8; BLOCK]) -> bool {
    let Some(stored) = parse_octal(&header[148..156]) else {
        return false;
    };
    let mut unsigned: u64 = 0;
    let mut signed: i64 = 0;
    for (i, b) in header.iter().enumerate() {
        let b = if (148..156).contains(&i) { b' ' } else { *b };
        unsigned += u64::from(b);
        signed += i64::from(b as i8);
    }
    stored == unsigned || stored as i64 == signed
}

fn parse_pax(data: &[u8]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut rest = data;
    while !rest.is_empty() {
        let Some(space) = rest.iter().position(|b| *b == b' ') else { break };
        let Some(len) = std::str::from_utf8(&rest[..space]).ok().and_then(|s| s.parse::<usize>().ok()) else {
            break;
        };
        if len <= space || len > rest.len() {
            break;
        }
        let record = &rest[space + 1..len];
        let record = record.strip_suffix(b"\n").unwrap_or(record);
        if let Some(eq) = record.iter().position(|b| *b == b'=') {
            out.push((
                String::from_utf8_lossy(&record[..eq]).into_owned(),
                String::from_utf8_lossy(&record[eq + 1..]).into_owned(),
            ));
        }
        rest = &rest[len..];
    }
    out
}

impl<R: Read> TarReader<R> {
    pub fn new(inner: R) -> Self {
        TarReader {
            inner,
            offset: 0,
            finished: false,
        }
    }

    /// Reads exactly `buf.len()` bytes. Returns `Ok(false)` on a clean EOF
    /// before the first byte and `TruncatedArchive` on a partial read.
    fn fill(&mut self, buf: &mut [u8]) -> Result<bool, IngestError> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    if got == 0 {
                        return Ok(false);
                    }
                    return Err(IngestError::TruncatedArchive {
                        offset: self.offset + got as u64,
                    });
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(IngestError::Read(e.to_string())),
            }
        }
        self.offset += buf.len() as u64;
        Ok(true)
    }

    fn read_data(&mut self, size: u64) -> Result<Vec<u8>, IngestError> {
        let padded = size.div_ceil(BLOCK as u64) * BLOCK as u64;
        let mut data = vec![0u8; padded as usize];
        if padded > 0 && !self.fill(&mut data)? {
            return Err(IngestError::TruncatedArchive { offset: self.offset });
        }
        data.truncate(size as usize);
        Ok(data)
    }

    fn next_member(&mut self) -> Result<Option<TarMember>, IngestError> {
        let mut long_name: Option<String> = None;
        let mut long_link: Option<String> = None;
        let mut pax_path: Option<String> = None;
        let mut pax_link: Option<String> = None;
        let mut pax_size: Option<u64> = None;
        let mut first_offset = None;

        loop {
            let header_offset = self.offset;
            let mut header = [0u8; BLOCK];
            if !self.fill(&mut header)? {
                // EOF without the end-of-archive marker; accepted only
                // between members
                if first_offset.is_some() {
                    return Err(IngestError::TruncatedArchive { offset: self.offset });
                }
                return Ok(None);
            }
            if header.iter().all(|b| *b == 0) {
                if first_offset.is_some() {
                    return Err(IngestError::CorruptHeader {
                        offset: header_offset,
                        reason: "zero block after extension header".into(),
                    });
                }
                return Ok(None);
            }
            if !checksum_ok(&header) {
                return Err(IngestError::CorruptHeader {
                    offset: header_offset,
                    reason: "header checksum mismatch".into(),
                });
            }
            first_offset.get_or_insert(header_offset);
            let size = pax_size.take().map(Ok).unwrap_or_else(|| {
                parse_octal(&header[124..136]).ok_or_else(|| IngestError::CorruptHeader {
                    offset: header_offset,
                    reason: "bad size field".into(),
                })
            })?;
            let typeflag = header[156];
            match typeflag {
                b'L' => {
                    long_name = Some(cstr(&self.read_data(size)?));
                    continue;
                }
                b'K' => {
                    long_link = Some(cstr(&self.read_data(size)?));
                    continue;
                }
                b'x' => {
                    for (k, v) in parse_pax(&self.read_data(size)?) {
                        match k.as_str() {
                            "path" => pax_path = Some(v),
                            "linkpath" => pax_link = Some(v),
                            "size" => pax_size = v.parse().ok(),
                            _ => {}
                        }
                    }
                    continue;
                }
                b'g' => {
                    self.read_data(size)?;
                    continue;
                }
                _ => {}
            }

            // GNU headers ("ustar  ") reuse the prefix area for other fields
            let ustar = &header[257..263] == b"ustar\0";
            let base_name = cstr(&header[0..100]);
            let prefix = if ustar { cstr(&header[345..500]) } else { String::new() };
            let header_path = if prefix.is_empty() {
                base_name
            } else {
                format!("{prefix}/{base_name}")
            };
            let path = pax_path.take().or(long_name.take()).unwrap_or(header_path);
            let link_target = pax_link.take().or(long_link.take()).unwrap_or_else(|| cstr(&header[157..257]));
            let kind = match typeflag {
                b'0' | 0 | b'7' => MemberKind::Regular,
                b'5' => MemberKind::Directory,
                b'2' => MemberKind::Symlink,
                b'1' => MemberKind::HardLink,
                b'3' | b'4' | b'6' => MemberKind::Special,
                other => MemberKind::Other(other),
            };
            let kind = if kind == MemberKind::Regular && path.ends_with('/') {
                MemberKind::Directory
            } else {
                kind
            };
            // links and directories may still declare a size; skip it
            let data = self.read_data(size)?;
            let data = if kind == MemberKind::Regular { data } else { Vec::new() };
            return Ok(Some(TarMember {
                path,
                kind,
                link_target,
                data,
                offset: first_offset.unwrap_or(header_offset),
            }));
        }
    }
}

impl<R: Read> Iterator for TarReader<R> {
    type Item = Result<TarMember, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        match self.next_member() {
            Ok(Some(m)) => Some(Ok(m)),
            Ok(None) => {
                self.finished = true;
                None
            }
            Err(e) => {
                self.finished = true;
                Some(Err(e))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tar_with(entries: &[(&str, &[u8])]) -> Vec<u8> {
        let mut builder = tar::Builder::new(Vec::new());
        for (path, data) in entries {
            let mut header = tar::Header::new_ustar();
            header.set_size(data.len() as u64);
            header.set_mode(0o644);
            header.set_entry_type(tar::EntryType::Regular);
            header.set_cksum();
            builder.append_data(&mut header, path, *data).unwrap();
        }
        builder.into_inner().unwrap()
    }

    fn read_all(bytes: &[u8]) -> Result<Vec<TarMember>, IngestError> {
        TarReader::new(bytes).collect()
    }

    #[test]
    fn reads_regular_members() {
        let bytes = tar_with(&[("apps/p/f/x", b"abc"), ("b", b"")]);
        let members = read_all(&bytes).unwrap();
        assert_eq!(members.len(), 2);
        assert_eq!(members[0].path, "apps/p/f/x");
        assert_eq!(members[0].data, b"abc");
        assert_eq!(members[1].data, b"");
        assert_eq!(members[1].offset, 1024);
    }

    #[test]
    fn long_names_via_gnu_and_pax() {
        let long = format!("{}/file.txt", "d".repeat(150));
        let mut builder = tar::Builder::new(Vec::new());
        let mut header = tar::Header::new_gnu();
        header.set_size(2);
        header.set_mode(0o644);
        builder.append_data(&mut header, &long, &b"hi"[..]).unwrap();
        let bytes = builder.into_inner().unwrap();
        let members = read_all(&bytes).unwrap();
        assert_eq!(members.len(), 1);
        assert_eq!(members[0].path, long);

        let mut builder = tar::Builder::new(Vec::new());
        builder
            .append_pax_extensions([("path", long.as_bytes())])
            .unwrap();
        let mut header = tar::Header::new_ustar();
        header.set_path("short").unwrap();
        header.set_size(1);
        header.set_cksum();
        builder.append(&header, &b"z"[..]).unwrap();
        let bytes = builder.into_inner().unwrap();
        let members = read_all(&bytes).unwrap();
        assert_eq!(members[0].path, long);
        assert_eq!(members[0].offset, 0);
    }

    #[test]
    fn truncated_archive_reports_offset() {
        let bytes = tar_with(&[("a", &[7u8; 1000])]);
        let cut = &bytes[..700];
        match read_all(cut) {
            Err(IngestError::TruncatedArchive { offset }) => assert_eq!(offset, 700),
            other => panic!("unexpected {other:?}"),
        }
        match read_all(&bytes[..100]) {
            Err(IngestError::TruncatedArchive { offset }) => assert_eq!(offset, 100),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_checksum_is_corrupt_header() {
        let mut bytes = tar_with(&[("a", b"x"), ("b", b"y")]);
        bytes[1024 + 10] ^= 0x20;
        match read_all(&bytes) {
            Err(IngestError::CorruptHeader { offset, .. }) => assert_eq!(offset, 1024),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_end_marker_is_tolerated() {
        let bytes = tar_with(&[("a", b"x")]);
        let members = read_all(&bytes[..1024]).unwrap();
        assert_eq!(members.len(), 1);
    }

    #[test]
    fn octal_and_base256() {
        assert_eq!(parse_octal(b"0000644 \0"), Some(0o644));
        assert_eq!(parse_octal(b"        "), Some(0));
        assert_eq!(parse_octal(&[0x80, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0]), Some(256));
    }
}
