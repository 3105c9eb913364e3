//! Line-record files: one JSON object per line.
//!
//! Two flavours are used across the engine. Append-structured stores
//! (corpus, submissions, assessments) add a record per write and resolve
//! duplicates by id on load, last write wins. Sealed files (the vector
//! index) are rewritten whole and end with a `#sha256:<hex>` line covering
//! every preceding byte.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

const DIGEST_PREFIX: &str = "#sha256:";

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed record at {path}:{line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("digest check failed for {path}: {reason}")]
    Digest { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> JsonlError + '_ {
    move |source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Appends one record and fsyncs before returning.
pub fn append<T: Serialize>(path: &Path, record: &T) -> Result<(), JsonlError> {
    append_many(path, std::slice::from_ref(record))
}

pub fn append_many<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let mut buf = Vec::new();
    for record in records {
        serde_json::to_writer(&mut buf, record).map_err(|e| JsonlError::Malformed {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;
        buf.push(b'\n');
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    file.write_all(&buf).map_err(io_err(path))?;
    file.sync_all().map_err(io_err(path))
}

/// Reads every record of an append-structured file.
///
/// A missing file reads as empty. A final line without a terminating newline
/// is a torn append and is dropped (and truncated away so later appends start
/// on a clean line); any other unparseable line is an error.
pub fn read_all<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let complete_len = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(pos) => pos + 1,
        None => 0,
    };
    if complete_len < bytes.len() {
        tracing::warn!(
            path = %path.display(),
            dropped = bytes.len() - complete_len,
            "dropping torn trailing record"
        );
        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        file.set_len(complete_len as u64).map_err(io_err(path))?;
        file.sync_all().map_err(io_err(path))?;
    }
    parse_lines(path, &bytes[..complete_len])
}

fn parse_lines<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<Vec<T>, JsonlError> {
    let text = std::str::from_utf8(bytes).map_err(|e| JsonlError::Malformed {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| JsonlError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Replaces `path` atomically with `bytes` (temp file, fsync, rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), JsonlError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "store".to_string());
    let tmp = match dir {
        Some(d) => d.join(format!(".{file_name}.tmp")),
        None => PathBuf::from(format!(".{file_name}.tmp")),
    };
    {
        let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
        file.write_all(bytes).map_err(io_err(&tmp))?;
        file.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))?;
    if let Some(d) = dir {
        if let Ok(handle) = File::open(d) {
            let _ = handle.sync_all();
        }
    }
    Ok(())
}

/// Writes all records followed by the digest line.
pub fn write_sealed<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let mut body = Vec::new();
    for record in records {
        serde_json::to_writer(&mut body, record).map_err(|e| JsonlError::Malformed {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })?;
        body.push(b'\n');
    }
    let digest = sha256_hex(&body);
    body.extend_from_slice(DIGEST_PREFIX.as_bytes());
    body.extend_from_slice(digest.as_bytes());
    body.push(b'\n');
    write_atomic(path, &body)
}

/// Reads a sealed file, verifying the trailing digest line.
pub fn read_sealed<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let digest_err = |reason: &str| JsonlError::Digest {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let trimmed = bytes.strip_suffix(b"\n").unwrap_or(&bytes);
    let split = trimmed.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let (body, last) = trimmed.split_at(split);
    let last = std::str::from_utf8(last).map_err(|_| digest_err("digest line is not UTF-8"))?;
    let expected = last
        .strip_prefix(DIGEST_PREFIX)
        .ok_or_else(|| digest_err("missing digest line"))?;
    if sha256_hex(body) != expected {
        return Err(digest_err("digest does not match content"));
    }
    parse_lines(path, body)
}
