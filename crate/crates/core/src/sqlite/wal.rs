//! Write-ahead log parsing and checkpoint emulation.
//!
//! A WAL is a 32-byte header followed by frames of (24-byte header, page).
//! A frame is valid when its salts equal the header salts and the running
//! checksum, seeded from the header checksum, matches. Only frames up to
//! the last valid commit frame (non-zero "database size" field) count.

use super::{be_u32, header_page_size, SqliteError};

pub const WAL_HEADER_LEN: usize = 32;
pub const WAL_FRAME_HEADER_LEN: usize = 24;
const WAL_MAGIC_LE: u32 = 0x377f_0682;
const WAL_MAGIC_BE: u32 = 0x377f_0683;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalHeader {
    pub magic: u32,
    pub format_version: u32,
    pub page_size: u32,
    pub checkpoint_seq: u32,
    pub salt1: u32,
    pub salt2: u32,
    pub checksum1: u32,
    pub checksum2: u32,
}

impl WalHeader {
    pub fn parse(wal: &[u8]) -> Result<Self, SqliteError> {
        if wal.len() < WAL_HEADER_LEN {
            return Err(SqliteError::NotWal);
        }
        let word = |i: usize| be_u32(wal, i * 4).unwrap();
        let magic = word(0);
        if magic != WAL_MAGIC_LE && magic != WAL_MAGIC_BE {
            return Err(SqliteError::NotWal);
        }
        Ok(WalHeader {
            magic,
            format_version: word(1),
            page_size: word(2),
            checkpoint_seq: word(3),
            salt1: word(4),
            salt2: word(5),
            checksum1: word(6),
            checksum2: word(7),
        })
    }

    pub fn big_endian_checksums(&self) -> bool {
        self.magic & 1 == 1
    }

    pub fn page_size(&self) -> usize {
        if self.page_size == 1 {
            65536
        } else {
            self.page_size as usize
        }
    }
}

/// The WAL running checksum over `data` (a multiple of 8 bytes), continuing
/// from `(s1, s2)`.
pub fn wal_checksum(big_endian: bool, data: &[u8], mut s1: u32, mut s2: u32) -> (u32, u32) {
    debug_assert!(data.len().is_multiple_of(8));
    for pair in data.chunks_exact(8) {
        let (a, b) = if big_endian {
            (
                u32::from_be_bytes(pair[0..4].try_into().unwrap()),
                u32::from_be_bytes(pair[4..8].try_into().unwrap()),
            )
        } else {
            (
                u32::from_le_bytes(pair[0..4].try_into().unwrap()),
                u32::from_le_bytes(pair[4..8].try_into().unwrap()),
            )
        };
        s1 = s1.wrapping_add(a).wrapping_add(s2);
        s2 = s2.wrapping_add(b).wrapping_add(s1);
    }
    (s1, s2)
}

/// Result of folding a WAL into a main database file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalMerge {
    pub bytes: Vec<u8>,
    /// Frames belonging to committed transactions that were applied.
    pub frames_applied: usize,
    pub commits: usize,
    /// Frames present in the file but not applied: torn, uncommitted, or
    /// left over from an earlier WAL generation.
    pub frames_discarded: usize,
}

struct Frame<'a> {
    page_no: u32,
    commit_size: u32,
    data: &'a [u8],
}

/// Returns the committed frames of `wal` and the number of frame slots
/// that were present but not valid-and-committed.
fn committed_frames<'a>(wal: &'a [u8], header: &WalHeader) -> (Vec<Frame<'a>>, usize, usize) {
    let page_size = header.page_size();
    let frame_len = WAL_FRAME_HEADER_LEN + page_size;
    let total_slots = (wal.len() - WAL_HEADER_LEN).div_ceil(frame_len);
    let big = header.big_endian_checksums();

    let (h1, h2) = wal_checksum(big, &wal[..24], 0, 0);
    if (h1, h2) != (header.checksum1, header.checksum2) {
        // an invalid header means the log is empty
        return (Vec::new(), 0, total_slots);
    }

    let mut frames = Vec::new();
    let mut committed = 0;
    let mut commits = 0;
    let (mut s1, mut s2) = (h1, h2);
    let mut at = WAL_HEADER_LEN;
    while at + frame_len <= wal.len() {
        let fh = &wal[at..at + WAL_FRAME_HEADER_LEN];
        let word = |i: usize| be_u32(fh, i * 4).unwrap();
        let (page_no, commit_size, salt1, salt2, c1, c2) = (word(0), word(1), word(2), word(3), word(4), word(5));
        if salt1 != header.salt1 || salt2 != header.salt2 || page_no == 0 {
            break;
        }
        let data = &wal[at + WAL_FRAME_HEADER_LEN..at + frame_len];
        let (n1, n2) = wal_checksum(big, &fh[..8], s1, s2);
        let (n1, n2) = wal_checksum(big, data, n1, n2);
        if (n1, n2) != (c1, c2) {
            break;
        }
        (s1, s2) = (n1, n2);
        frames.push(Frame {
            page_no,
            commit_size,
            data,
        });
        if commit_size != 0 {
            committed = frames.len();
            commits += 1;
        }
        at += frame_len;
    }
    frames.truncate(committed);
    let discarded = total_slots - committed;
    (frames, commits, discarded)
}

/// Produces the main-file bytes a full checkpoint of `wal` into `db` would
/// leave behind. Neither input is modified.
///
/// An empty `wal` (or a bare header) yields `db` unchanged. A torn or
/// uncommitted tail is dropped, keeping everything up to the last valid
/// commit frame.
pub fn merge_wal(db: &[u8], wal: &[u8]) -> Result<WalMerge, SqliteError> {
    if wal.is_empty() {
        return Ok(WalMerge {
            bytes: db.to_vec(),
            frames_applied: 0,
            commits: 0,
            frames_discarded: 0,
        });
    }
    let header = WalHeader::parse(wal)?;
    let page_size = header.page_size();
    if !(512..=65536).contains(&page_size) || !page_size.is_power_of_two() {
        return Err(SqliteError::NotWal);
    }
    if !db.is_empty() {
        let db_page_size = header_page_size(db).ok_or(SqliteError::NotDatabase)?;
        if db_page_size != page_size {
            return Err(SqliteError::WalMismatch(format!(
                "WAL page size {page_size} differs from database page size {db_page_size}"
            )));
        }
    }
    if wal.len() >= WAL_HEADER_LEN + WAL_FRAME_HEADER_LEN {
        let salt1 = be_u32(wal, WAL_HEADER_LEN + 8).unwrap();
        let salt2 = be_u32(wal, WAL_HEADER_LEN + 12).unwrap();
        if (salt1, salt2) != (header.salt1, header.salt2) {
            return Err(SqliteError::WalMismatch(format!(
                "first frame salts {salt1:#010x}/{salt2:#010x} differ from header salts {:#010x}/{:#010x}",
                header.salt1, header.salt2
            )));
        }
    }

    let (frames, commits, discarded) = committed_frames(wal, &header);
    let mut bytes = db.to_vec();
    let Some(last) = frames.last() else {
        return Ok(WalMerge {
            bytes,
            frames_applied: 0,
            commits: 0,
            frames_discarded: discarded,
        });
    };
    let final_pages = last.commit_size as usize;
    let needed = frames
        .iter()
        .map(|f| f.page_no as usize)
        .max()
        .unwrap_or(0)
        .max(final_pages);
    if bytes.len() < needed * page_size {
        bytes.resize(needed * page_size, 0);
    }
    // later frames overwrite earlier ones, as a checkpoint would
    for frame in &frames {
        let start = (frame.page_no as usize - 1) * page_size;
        bytes[start..start + page_size].copy_from_slice(frame.data);
    }
    bytes.truncate(final_pages * page_size);
    Ok(WalMerge {
        bytes,
        frames_applied: frames.len(),
        commits,
        frames_discarded: discarded,
    })
}

/// Rewrites the salts of a WAL header and of every frame carrying the old
/// salts, then recomputes the checksum chain. Frames after the first one
/// that breaks the chain are left untouched.
pub fn rewrite_salts(wal: &mut [u8], salt1: u32, salt2: u32) -> Result<(), SqliteError> {
    let header = WalHeader::parse(wal)?;
    let big = header.big_endian_checksums();
    let page_size = header.page_size();
    let frame_len = WAL_FRAME_HEADER_LEN + page_size;

    // find the valid prefix before touching anything
    let (old1, old2) = wal_checksum(big, &wal[..24], 0, 0);
    let mut valid = 0;
    if (old1, old2) == (header.checksum1, header.checksum2) {
        let (mut s1, mut s2) = (old1, old2);
        let mut at = WAL_HEADER_LEN;
        while at + frame_len <= wal.len() {
            let fh = &wal[at..at + WAL_FRAME_HEADER_LEN];
            let word = |i: usize| be_u32(fh, i * 4).unwrap();
            if word(2) != header.salt1 || word(3) != header.salt2 {
                break;
            }
            let (n1, n2) = wal_checksum(big, &fh[..8], s1, s2);
            let (n1, n2) = wal_checksum(big, &wal[at + WAL_FRAME_HEADER_LEN..at + frame_len], n1, n2);
            if (n1, n2) != (word(4), word(5)) {
                break;
            }
            (s1, s2) = (n1, n2);
            valid += 1;
            at += frame_len;
        }
    }

    wal[16..20].copy_from_slice(&salt1.to_be_bytes());
    wal[20..24].copy_from_slice(&salt2.to_be_bytes());
    let (mut s1, mut s2) = wal_checksum(big, &wal[..24], 0, 0);
    wal[24..28].copy_from_slice(&s1.to_be_bytes());
    wal[28..32].copy_from_slice(&s2.to_be_bytes());
    for i in 0..valid {
        let at = WAL_HEADER_LEN + i * frame_len;
        wal[at + 8..at + 12].copy_from_slice(&salt1.to_be_bytes());
        wal[at + 12..at + 16].copy_from_slice(&salt2.to_be_bytes());
        let (n1, n2) = wal_checksum(big, &wal[at..at + 8], s1, s2);
        let (n1, n2) = wal_checksum(big, &wal[at + WAL_FRAME_HEADER_LEN..at + frame_len], n1, n2);
        wal[at + 16..at + 20].copy_from_slice(&n1.to_be_bytes());
        wal[at + 20..at + 24].copy_from_slice(&n2.to_be_bytes());
        (s1, s2) = (n1, n2);
    }
    Ok(())
}
