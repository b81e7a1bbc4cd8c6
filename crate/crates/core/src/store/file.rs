use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::{parse_log, render_jsonl, stamp, Category, EventLog, StoreError, StoredEvent};
use crate::time::Timestamp;

/// What to do with a final line that lacks its LF terminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TailPolicy {
    #[default]
    Reject,
    /// Discard the partial line (and cut it from the file on open).
    DropTruncated,
}

/// JSON Lines log on disk. Every append is fsynced before returning.
#[derive(Debug)]
pub struct FileLog {
    path: PathBuf,
    file: File,
    last_seq: u64,
    len: u64,
}

impl FileLog {
    /// Opens (creating if needed) the log at `path` and validates its content.
    pub fn open(path: impl AsRef<Path>, tail: TailPolicy) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| StoreError::storage(format!("{}: {e}", path.display())))?;
        let mut text = String::new();
        file.read_to_string(&mut text)
            .map_err(|e| StoreError::storage(format!("{}: {e}", path.display())))?;
        let parsed = parse_log(&text, tail)?;
        if let Some(line) = parsed.dropped_tail {
            tracing::warn!(path = %path.display(), line, "dropping truncated final log line");
            file.set_len(parsed.valid_len as u64)
                .map_err(StoreError::storage)?;
            file.sync_data().map_err(StoreError::storage)?;
        }
        Ok(FileLog {
            path,
            file,
            last_seq: parsed.events.len() as u64,
            len: parsed.valid_len as u64,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Reads and validates the log at `path` without opening it for writing.
    pub fn read(path: impl AsRef<Path>, tail: TailPolicy) -> Result<Vec<StoredEvent>, StoreError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| StoreError::storage(format!("{}: {e}", path.display())))?;
        Ok(parse_log(&text, tail)?.events)
    }
}

impl EventLog for FileLog {
    fn last_seq(&self) -> u64 {
        self.last_seq
    }

    fn append_batch(
        &mut self,
        bodies: Vec<(Category, Value)>,
        recorded_at: Timestamp,
    ) -> Result<Vec<StoredEvent>, StoreError> {
        let stored = stamp(self.last_seq + 1, bodies, recorded_at);
        let text = render_jsonl(&stored);
        let written = self
            .file
            .write_all(text.as_bytes())
            .and_then(|_| self.file.flush())
            .and_then(|_| self.file.sync_data());
        if let Err(err) = written {
            // Best effort: cut any partial write so the file stays parseable.
            let _ = self.file.set_len(self.len);
            return Err(StoreError::storage(err));
        }
        self.len += text.len() as u64;
        self.last_seq += stored.len() as u64;
        Ok(stored)
    }

    fn events(&self) -> Result<Vec<StoredEvent>, StoreError> {
        FileLog::read(&self.path, TailPolicy::Reject)
    }
}
