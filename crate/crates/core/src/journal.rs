//! Length-prefixed, checksummed append-only log.
//!
//! Every entry is `len: u32 LE | crc32: u32 LE | payload[len]`, where the
//! CRC-32 (IEEE) covers the payload only. A crash can leave at most one
//! incomplete entry at the tail; [`scan`] reports it so callers can truncate.
//! A *complete* entry whose checksum does not match is corruption, not a torn
//! write, and is reported as an error.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

pub const ENTRY_HEADER_LEN: usize = 8;

/// Upper bound on a single entry; larger length prefixes are treated as corruption.
pub const MAX_ENTRY_LEN: u32 = 64 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal entry {index} at byte {offset}: checksum mismatch")]
    ChecksumMismatch { index: usize, offset: u64 },
    #[error("journal entry {index} at byte {offset}: length {len} exceeds limit")]
    Oversized { index: usize, offset: u64, len: u32 },
    #[error("journal I/O: {0}")]
    Io(#[from] io::Error),
}

pub fn encode_entry(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(ENTRY_HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

#[derive(Debug, Default)]
pub struct Scan {
    /// Payloads of every committed entry, in order.
    pub entries: Vec<Vec<u8>>,
    /// Byte length of the committed prefix.
    pub committed_len: u64,
    /// Bytes past `committed_len` belonging to an incomplete entry.
    pub torn_bytes: u64,
}

pub fn scan(bytes: &[u8]) -> Result<Scan, JournalError> {
    let mut out = Scan::default();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < ENTRY_HEADER_LEN {
            break;
        }
        let len = u32::from_le_bytes(rest[0..4].try_into().unwrap());
        let crc = u32::from_le_bytes(rest[4..8].try_into().unwrap());
        if len > MAX_ENTRY_LEN {
            return Err(JournalError::Oversized {
                index: out.entries.len(),
                offset: pos as u64,
                len,
            });
        }
        let end = ENTRY_HEADER_LEN + len as usize;
        if rest.len() < end {
            break;
        }
        let payload = &rest[ENTRY_HEADER_LEN..end];
        if crc32fast::hash(payload) != crc {
            return Err(JournalError::ChecksumMismatch {
                index: out.entries.len(),
                offset: pos as u64,
            });
        }
        out.entries.push(payload.to_vec());
        pos += end;
    }
    out.committed_len = pos as u64;
    out.torn_bytes = (bytes.len() - pos) as u64;
    Ok(out)
}

/// A journal on disk. Appends are fsynced before returning.
#[derive(Debug)]
pub struct JournalFile {
    path: PathBuf,
    file: File,
}

impl JournalFile {
    /// Open (creating if needed), drop any torn tail and return the committed entries.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<Vec<u8>>), JournalError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut bytes = Vec::new();
        file.seek(SeekFrom::Start(0))?;
        file.read_to_end(&mut bytes)?;
        let scan = scan(&bytes)?;
        if scan.torn_bytes > 0 {
            file.set_len(scan.committed_len)?;
            file.sync_all()?;
        }
        Ok((Self { path, file }, scan.entries))
    }

    pub fn append(&mut self, payload: &[u8]) -> io::Result<()> {
        // One write call per entry so concurrent O_APPEND writers never interleave
        // inside an entry.
        self.file.write_all(&encode_entry(payload))?;
        self.file.sync_data()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
