//! Versioned JSONL and JSON helpers shared by every artifact format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

/// Version stamped on every record this crate writes.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: format_version {found} is not supported (expected {expected})")]
    Version {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl FormatError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// An absent version is accepted; a present one must match.
pub fn check_version(path: &Path, found: Option<u32>) -> Result<(), FormatError> {
    match found {
        Some(v) if v != FORMAT_VERSION => Err(FormatError::Version {
            path: path.display().to_string(),
            found: v,
            expected: FORMAT_VERSION,
        }),
        _ => Ok(()),
    }
}

/// Reads non-blank lines as `(1-based line number, text)`.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, FormatError> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((idx + 1, line));
    }
    Ok(out)
}

#[derive(serde::Deserialize)]
struct VersionProbe {
    format_version: Option<u32>,
}

/// Strictly reads a JSONL file; every line must parse and carry a compatible version.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    let mut out = Vec::new();
    for (line_no, text) in read_lines(path)? {
        let probe: VersionProbe = serde_json::from_str(&text).map_err(|e| FormatError::Line {
            path: path.display().to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        check_version(path, probe.format_version)?;
        let rec = serde_json::from_str(&text).map_err(|e| FormatError::Line {
            path: path.display().to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes one compact JSON object per line, LF terminated.
pub fn write_jsonl<'a, T, I>(path: &Path, records: I) -> Result<(), FormatError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n").map_err(|e| FormatError::io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| FormatError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    let probe: VersionProbe = serde_json::from_str(&text).map_err(|e| FormatError::Line {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    check_version(path, probe.format_version)?;
    serde_json::from_str(&text).map_err(|e| FormatError::Line {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub(crate) fn current_version() -> u32 {
    FORMAT_VERSION
}
