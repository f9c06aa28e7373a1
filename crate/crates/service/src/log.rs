//! Append-only event log, one JSON record per line.
//!
//! Each line is `{"seq", "timestamp", "kind", "payload"}` where `kind` and
//! `payload` are the core trace event verbatim. A cohort's events go out in a
//! single write followed by `fsync`, so a crash leaves at most one partial
//! line at the end of the file. Opening the log drops that line.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use plateau_core::design::TraceEvent;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

/// What was found when opening an existing log.
#[derive(Debug)]
pub struct Recovered {
    pub log: EventLog,
    pub records: Vec<LogRecord>,
    /// Bytes dropped from a torn final line.
    pub truncated: u64,
}

impl EventLog {
    /// Creates a new log; fails if the file already exists.
    pub fn create(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create_new(true)
            .read(true)
            .append(true)
            .open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            next_seq: 0,
        })
    }

    pub fn open(path: &Path) -> Result<Recovered> {
        let mut file = OpenOptions::new().read(true).append(true).open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;

        let corrupt = |message: String| ServiceError::CorruptLog {
            path: path.display().to_string(),
            message,
        };
        let mut records: Vec<LogRecord> = Vec::new();
        let mut good_len = 0usize;
        let mut start = 0usize;
        while start < bytes.len() {
            let end = bytes[start..].iter().position(|&b| b == b'\n').map(|i| start + i);
            let line_end = end.unwrap_or(bytes.len());
            let parsed = serde_json::from_slice::<LogRecord>(&bytes[start..line_end]);
            match (parsed, end) {
                (Ok(rec), Some(e)) => {
                    if rec.seq != records.len() as u64 {
                        return Err(corrupt(format!(
                            "record at byte {start} has seq {} but {} was expected",
                            rec.seq,
                            records.len()
                        )));
                    }
                    records.push(rec);
                    good_len = e + 1;
                    start = e + 1;
                }
                // No trailing newline: the final write never completed.
                (_, None) => break,
                (Err(err), Some(e)) if e + 1 == bytes.len() => {
                    tracing::warn!(path = %path.display(), %err, "dropping unreadable final record");
                    break;
                }
                (Err(err), Some(_)) => {
                    return Err(corrupt(format!("unreadable record at byte {start}: {err}")));
                }
            }
        }
        let truncated = (bytes.len() - good_len) as u64;
        if truncated > 0 {
            file.set_len(good_len as u64)?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok(Recovered {
            log: Self {
                path: path.to_path_buf(),
                file,
                next_seq: records.len() as u64,
            },
            records,
            truncated,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Writes the events as one batch and syncs. On failure the log position
    /// is restored so a later retry does not leave a gap.
    pub fn append(
        &mut self,
        events: &[TraceEvent],
        timestamp: DateTime<Utc>,
    ) -> Result<Vec<LogRecord>> {
        let records: Vec<LogRecord> = events
            .iter()
            .enumerate()
            .map(|(i, e)| LogRecord {
                seq: self.next_seq + i as u64,
                timestamp,
                event: e.clone(),
            })
            .collect();
        let mut buf = Vec::new();
        for r in &records {
            serde_json::to_writer(&mut buf, r).map_err(std::io::Error::other)?;
            buf.push(b'\n');
        }
        let before = self.file.metadata()?.len();
        let written = self
            .file
            .write_all(&buf)
            .and_then(|_| self.file.sync_data());
        if let Err(e) = written {
            let _ = self.file.set_len(before);
            return Err(e.into());
        }
        self.next_seq += records.len() as u64;
        Ok(records)
    }
}
