//! JSON-lines helpers shared by every on-disk record format.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl JsonlError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        JsonlError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn record(path: &Path, line: usize, message: impl Into<String>) -> Self {
        JsonlError::Record {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

/// Parse every non-blank line. `check` runs on each record and may reject it.
pub fn read_jsonl_with<T, F>(path: impl AsRef<Path>, mut check: F) -> Result<Vec<T>, JsonlError>
where
    T: DeserializeOwned,
    F: FnMut(&T) -> Result<(), String>,
{
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| JsonlError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T =
            serde_json::from_str(&line).map_err(|e| JsonlError::record(path, i + 1, e.to_string()))?;
        check(&record).map_err(|m| JsonlError::record(path, i + 1, m))?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, JsonlError> {
    read_jsonl_with(path, |_| Ok(()))
}

/// Exclusive, line-buffered JSON-lines writer. Holds an OS file lock so two
/// processes cannot interleave records in the same file.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: impl AsRef<Path>, append: bool) -> Result<Self, JsonlError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| JsonlError::io(path, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| JsonlError::io(path, e))?;
        file.try_lock().map_err(|e| {
            JsonlError::io(
                path,
                std::io::Error::new(std::io::ErrorKind::WouldBlock, e.to_string()),
            )
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Write one record and flush it, so a crash never leaves a partial line
    /// behind a completed one.
    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<(), JsonlError> {
        let line = serde_json::to_string(record)
            .map_err(|e| JsonlError::record(&self.path, 0, e.to_string()))?;
        self.write_line(&line)
    }

    pub fn write_line(&mut self, line: &str) -> Result<(), JsonlError> {
        let path = &self.path;
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .and_then(|_| self.out.flush())
            .map_err(|e| JsonlError::io(path, e))
    }
}

pub fn write_jsonl<T: Serialize>(
    path: impl AsRef<Path>,
    records: &[T],
    append: bool,
) -> Result<(), JsonlError> {
    let mut w = JsonlWriter::create(path, append)?;
    for r in records {
        w.write(r)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct R {
        a: u32,
    }

    #[test]
    fn roundtrip_append_and_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/r.jsonl");
        write_jsonl(&p, &[R { a: 1 }], false).unwrap();
        write_jsonl(&p, &[R { a: 2 }], true).unwrap();
        assert_eq!(read_jsonl::<R>(&p).unwrap(), vec![R { a: 1 }, R { a: 2 }]);

        std::fs::write(&p, "{\"a\":1}\n{\"a\":").unwrap();
        let err = read_jsonl::<R>(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");

        std::fs::write(&p, "").unwrap();
        assert!(read_jsonl::<R>(&p).unwrap().is_empty());
    }

    #[test]
    fn second_writer_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        let _w = JsonlWriter::create(&p, true).unwrap();
        assert!(JsonlWriter::create(&p, true).is_err());
    }
}
