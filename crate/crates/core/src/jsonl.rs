//! JSON-lines helpers shared by every on-disk record format.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

/// One parsed line: 1-based line number plus the JSON object on it.
pub(crate) struct Line {
    pub number: usize,
    pub object: Map<String, Value>,
}

#[derive(Debug)]
pub(crate) enum LineError {
    Io(std::io::Error),
    /// The line is not a JSON object.
    NotObject { number: usize, reason: String },
}

/// Read every non-blank line of `path` as a JSON object.
pub(crate) fn read_objects(path: &Path) -> Result<Vec<Line>, LineError> {
    let file = fs::File::open(path).map_err(LineError::Io)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(LineError::Io)?;
        let number = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match serde_json::from_str::<Value>(trimmed) {
            Ok(Value::Object(object)) => out.push(Line { number, object }),
            Ok(_) => {
                return Err(LineError::NotObject {
                    number,
                    reason: "expected a JSON object".into(),
                })
            }
            Err(e) => {
                return Err(LineError::NotObject {
                    number,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Serialize `records` one per line. The file is written to a sibling temp
/// path and renamed into place, so readers never observe a partial file.
pub(crate) fn write_records<T: Serialize>(path: &Path, records: &[T]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("partial");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(bytes)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)
}
