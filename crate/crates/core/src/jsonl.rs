//! Line-delimited JSON reading and writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Splits a file into `(line_number, text)` pairs, 1-based, skipping blank
/// lines. Invalid UTF-8 is an error naming the line.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    split_lines(path, &bytes)
}

pub(crate) fn split_lines(path: &Path, bytes: &[u8]) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let text = std::str::from_utf8(raw).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message: format!("invalid UTF-8: {e}"),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        out.push((idx + 1, text.to_string()));
    }
    Ok(out)
}

/// Parses every non-blank line as `T`.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text)
                .map(|rec| (line, rec))
                .map_err(|e| Error::Malformed {
                    path: path.to_path_buf(),
                    line,
                    message: e.to_string(),
                })
        })
        .collect()
}

/// Serializes records one per line, each terminated by `\n`.
pub fn to_string<'a, T, I>(records: I) -> String
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut out = String::new();
    for rec in records {
        // Plain data structs with string keys cannot fail to serialize.
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_records<'a, T, I>(path: &Path, records: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    write_bytes(path, to_string(records).as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}
