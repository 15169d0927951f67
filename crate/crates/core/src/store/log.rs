//! Line-delimited append-only log with torn-write detection.
//!
//! Each record is one line:
//!
//! ```text
//! <byte-length> <crc32-hex> <record-document>\n
//! ```
//!
//! `byte-length` is the decimal length of the document in bytes and `crc32-hex` the eight
//! lowercase hex digits of its CRC-32 (IEEE). Documents are compact JSON and never contain
//! a raw newline. On open, the first line that fails any check and everything after it is
//! discarded and the file truncated to the last valid record.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncPolicy {
    /// `fsync` after every append; an append that returned is durable.
    #[default]
    EveryAppend,
    /// Leave flushing to the OS. Used by simulations that never crash.
    OsBuffered,
}

/// Encode one record line.
pub fn encode_line(doc: &[u8]) -> Vec<u8> {
    let crc = crc32fast::hash(doc);
    let mut line = format!("{} {:08x} ", doc.len(), crc).into_bytes();
    line.extend_from_slice(doc);
    line.push(b'\n');
    line
}

/// Result of scanning raw log bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded<'a> {
    pub docs: Vec<&'a [u8]>,
    /// Length of the valid prefix in bytes.
    pub valid_len: usize,
    /// Number of (possibly partial) records after the valid prefix.
    pub dropped: usize,
}

/// Split `bytes` into documents, stopping at the first invalid record.
pub fn decode_lines(bytes: &[u8]) -> Decoded<'_> {
    let mut docs = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        match parse_line(&bytes[pos..]) {
            Some((doc, used)) => {
                docs.push(doc);
                pos += used;
            }
            None => break,
        }
    }
    let dropped = if pos < bytes.len() {
        let rest = &bytes[pos..];
        rest.iter().filter(|b| **b == b'\n').count() + usize::from(rest.last() != Some(&b'\n'))
    } else {
        0
    };
    Decoded { docs, valid_len: pos, dropped }
}

fn parse_line(bytes: &[u8]) -> Option<(&[u8], usize)> {
    let sp1 = bytes.iter().take(21).position(|b| *b == b' ')?;
    let len: usize = std::str::from_utf8(&bytes[..sp1]).ok()?.parse().ok()?;
    let crc_start = sp1 + 1;
    let crc_end = crc_start + 8;
    if bytes.len() < crc_end + 1 || bytes[crc_end] != b' ' {
        return None;
    }
    let crc_hex = std::str::from_utf8(&bytes[crc_start..crc_end]).ok()?;
    if crc_hex.bytes().any(|b| !matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return None;
    }
    let crc = u32::from_str_radix(crc_hex, 16).ok()?;
    let doc_start = crc_end + 1;
    let doc_end = doc_start.checked_add(len)?;
    if bytes.len() < doc_end + 1 || bytes[doc_end] != b'\n' {
        return None;
    }
    let doc = &bytes[doc_start..doc_end];
    (crc32fast::hash(doc) == crc).then_some((doc, doc_end + 1))
}

enum Medium {
    File { file: File, path: PathBuf, sync: SyncPolicy, _lock: File },
    Memory(Vec<u8>),
}

/// An append-only log over a file (exclusively locked) or an in-memory buffer.
pub struct LineLog {
    medium: Medium,
}

impl std::fmt::Debug for LineLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.medium {
            Medium::File { path, .. } => write!(f, "LineLog({})", path.display()),
            Medium::Memory(b) => write!(f, "LineLog(memory, {} bytes)", b.len()),
        }
    }
}

/// What was found when opening a log.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Recovery {
    pub valid_records: usize,
    pub dropped_records: usize,
    pub truncated_bytes: usize,
}

pub fn lock_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".lock");
    PathBuf::from(p)
}

impl LineLog {
    /// Open (creating if needed) a log file, take its write lock and truncate any corrupt
    /// tail. Returns the valid documents.
    pub fn open_file(path: &Path, sync: SyncPolicy) -> Result<(Self, Vec<Vec<u8>>, Recovery), StoreError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let lock_file = OpenOptions::new().create(true).truncate(false).write(true).open(lock_path(path))?;
        match lock_file.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked(path.to_path_buf())),
            Err(fs::TryLockError::Error(e)) => return Err(e.into()),
        }
        let mut file = OpenOptions::new().create(true).truncate(false).read(true).write(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let decoded = decode_lines(&bytes);
        let recovery = Recovery {
            valid_records: decoded.docs.len(),
            dropped_records: decoded.dropped,
            truncated_bytes: bytes.len() - decoded.valid_len,
        };
        let docs: Vec<Vec<u8>> = decoded.docs.iter().map(|d| d.to_vec()).collect();
        if recovery.truncated_bytes > 0 {
            log::warn!(
                "{}: dropped {} corrupt trailing record(s), {} bytes",
                path.display(),
                recovery.dropped_records,
                recovery.truncated_bytes
            );
            file.set_len(decoded.valid_len as u64)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        let log = LineLog { medium: Medium::File { file, path: path.to_path_buf(), sync, _lock: lock_file } };
        Ok((log, docs, recovery))
    }

    /// An in-memory log seeded with `bytes` (e.g. a captured file image).
    pub fn from_bytes(mut bytes: Vec<u8>) -> (Self, Vec<Vec<u8>>, Recovery) {
        let decoded = decode_lines(&bytes);
        let recovery = Recovery {
            valid_records: decoded.docs.len(),
            dropped_records: decoded.dropped,
            truncated_bytes: bytes.len() - decoded.valid_len,
        };
        let docs = decoded.docs.iter().map(|d| d.to_vec()).collect();
        let valid = decoded.valid_len;
        bytes.truncate(valid);
        (LineLog { medium: Medium::Memory(bytes) }, docs, recovery)
    }

    pub fn memory() -> Self {
        LineLog { medium: Medium::Memory(Vec::new()) }
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.medium {
            Medium::File { path, .. } => Some(path),
            Medium::Memory(_) => None,
        }
    }

    /// Append one document. Returns once the line is written (and synced, per policy).
    pub fn append(&mut self, doc: &[u8]) -> Result<(), StoreError> {
        if doc.contains(&b'\n') {
            return Err(StoreError::Corrupt("record document contains a newline".into()));
        }
        let line = encode_line(doc);
        match &mut self.medium {
            Medium::File { file, sync, .. } => {
                file.write_all(&line)?;
                if *sync == SyncPolicy::EveryAppend {
                    file.sync_data()?;
                }
            }
            Medium::Memory(buf) => buf.extend_from_slice(&line),
        }
        Ok(())
    }

    /// All committed bytes.
    pub fn read_all(&self) -> Result<Vec<u8>, StoreError> {
        match &self.medium {
            Medium::File { path, .. } => Ok(fs::read(path)?),
            Medium::Memory(buf) => Ok(buf.clone()),
        }
    }

    /// Replace the whole content with `docs` (atomically for files: write aside, then rename).
    pub fn rewrite(&mut self, docs: &[Vec<u8>]) -> Result<(), StoreError> {
        let mut bytes = Vec::new();
        for d in docs {
            bytes.extend_from_slice(&encode_line(d));
        }
        match &mut self.medium {
            Medium::File { file, path, .. } => {
                write_atomic(path, &bytes)?;
                *file = OpenOptions::new().read(true).write(true).open(&*path)?;
                file.seek(SeekFrom::End(0))?;
            }
            Medium::Memory(buf) => *buf = bytes,
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        if let Medium::File { file, .. } = &mut self.medium {
            file.sync_all()?;
        }
        Ok(())
    }
}

/// Write `bytes` to `path` via a synced temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn line_format_is_exact() {
        let line = encode_line(br#"{"a":1}"#);
        let crc = crc32fast::hash(br#"{"a":1}"#);
        assert_eq!(line, format!("7 {crc:08x} {{\"a\":1}}\n").into_bytes());
    }

    #[test]
    fn torn_tail_is_dropped() {
        let mut bytes = encode_line(b"one");
        bytes.extend(encode_line(b"two"));
        let full = bytes.len();
        bytes.extend(&encode_line(b"three")[..5]);
        let d = decode_lines(&bytes);
        assert_eq!(d.docs, vec![&b"one"[..], &b"two"[..]]);
        assert_eq!(d.valid_len, full);
        assert_eq!(d.dropped, 1);
    }

    #[test]
    fn bad_checksum_stops_scan() {
        let mut bytes = encode_line(b"one");
        let mut bad = encode_line(b"two");
        let n = bad.len();
        bad[n - 2] = b'X';
        bytes.extend(bad);
        bytes.extend(encode_line(b"three"));
        let d = decode_lines(&bytes);
        assert_eq!(d.docs.len(), 1);
        assert_eq!(d.dropped, 2);
    }

    #[test]
    fn file_log_truncates_and_locks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stm.log");
        {
            let (mut log, docs, _) = LineLog::open_file(&path, SyncPolicy::EveryAppend).unwrap();
            assert!(docs.is_empty());
            log.append(b"{\"n\":1}").unwrap();
            log.append(b"{\"n\":2}").unwrap();
            assert!(matches!(LineLog::open_file(&path, SyncPolicy::EveryAppend), Err(StoreError::Locked(_))));
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"12 0000").unwrap();
        drop(f);
        let (mut log, docs, rec) = LineLog::open_file(&path, SyncPolicy::EveryAppend).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(rec.dropped_records, 1);
        assert_eq!(rec.truncated_bytes, 7);
        log.append(b"{\"n\":3}").unwrap();
        assert_eq!(decode_lines(&log.read_all().unwrap()).docs.len(), 3);
    }

    proptest! {
        #[test]
        fn any_truncation_keeps_a_prefix(docs in proptest::collection::vec("[a-z{}:\" ]{0,30}", 1..20), cut in 0.0f64..1.0) {
            let mut bytes = Vec::new();
            let mut ends = vec![0];
            for d in &docs {
                bytes.extend(encode_line(d.as_bytes()));
                ends.push(bytes.len());
            }
            let cut = (cut * bytes.len() as f64) as usize;
            let d = decode_lines(&bytes[..cut]);
            let complete = ends.iter().filter(|e| **e <= cut).count() - 1;
            prop_assert_eq!(d.docs.len(), complete);
            for (got, want) in d.docs.iter().zip(&docs) {
                prop_assert_eq!(*got, want.as_bytes());
            }
        }
    }
}
