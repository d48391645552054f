//! Append-only event log plus snapshot files in the data directory.
//!
//! `events.log` holds one JSON [`EventRecord`] per line. `snapshot.json`
//! holds the full state at some sequence number; writing one replaces the
//! file atomically and then empties the log. Recovery loads the snapshot and
//! replays the log records that follow it. A partial last line (a write torn
//! by a crash) is dropped; damage anywhere else stops recovery.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use heteroglossia_core::engine::{EventRecord, EventSink, State, StorageError};
use heteroglossia_core::Timestamp;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOG_FILE: &str = "events.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("data directory {path}: {message}")]
    Io { path: String, message: String },
    #[error("{file} line {line} is corrupt: {message}")]
    Corrupt { file: String, line: usize, message: String },
    #[error("event log does not continue the snapshot: expected sequence {expected}, found {found}")]
    Gap { expected: u64, found: u64 },
}

fn io_err(path: &Path, e: std::io::Error) -> RecoveryError {
    RecoveryError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    seq: u64,
    at: Timestamp,
    state: State,
}

/// What was found on disk.
#[derive(Debug, Default)]
pub struct Recovered {
    pub snapshot: Option<(State, u64)>,
    /// Records after the snapshot, in order.
    pub records: Vec<EventRecord>,
    /// Timestamp of the newest event or snapshot.
    pub last_at: Option<Timestamp>,
    /// Bytes of a torn final line that were discarded.
    pub dropped_tail_bytes: u64,
}

#[derive(Debug)]
pub struct Journal {
    dir: PathBuf,
    log: File,
    len: u64,
    fsync: bool,
}

impl Journal {
    pub fn open(dir: &Path, fsync: bool) -> Result<(Journal, Recovered), RecoveryError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let mut recovered = Recovered::default();

        let snap_path = dir.join(SNAPSHOT_FILE);
        if snap_path.exists() {
            let text = fs::read_to_string(&snap_path).map_err(|e| io_err(&snap_path, e))?;
            let snap: SnapshotFile = serde_json::from_str(&text).map_err(|e| RecoveryError::Corrupt {
                file: SNAPSHOT_FILE.into(),
                line: e.line(),
                message: e.to_string(),
            })?;
            recovered.last_at = Some(snap.at);
            recovered.snapshot = Some((snap.state, snap.seq));
        }
        let mut expected = recovered.snapshot.as_ref().map_or(0, |s| s.1) + 1;

        let log_path = dir.join(LOG_FILE);
        let mut good_len = 0u64;
        if log_path.exists() {
            let file = File::open(&log_path).map_err(|e| io_err(&log_path, e))?;
            let total = file.metadata().map_err(|e| io_err(&log_path, e))?.len();
            let mut reader = BufReader::new(file);
            let mut line = Vec::new();
            let mut n = 0usize;
            loop {
                line.clear();
                let read = reader.read_until(b'\n', &mut line).map_err(|e| io_err(&log_path, e))?;
                if read == 0 {
                    break;
                }
                n += 1;
                let complete = line.last() == Some(&b'\n');
                match serde_json::from_slice::<EventRecord>(&line) {
                    Ok(record) if complete => {
                        good_len += read as u64;
                        recovered.last_at = Some(record.at);
                        if record.seq < expected {
                            continue;
                        }
                        if record.seq != expected {
                            return Err(RecoveryError::Gap {
                                expected,
                                found: record.seq,
                            });
                        }
                        expected += 1;
                        recovered.records.push(record);
                    }
                    result => {
                        if good_len + read as u64 == total {
                            // torn final write
                            recovered.dropped_tail_bytes = read as u64;
                            break;
                        }
                        return Err(RecoveryError::Corrupt {
                            file: LOG_FILE.into(),
                            line: n,
                            message: result.err().map_or("unterminated line".into(), |e| e.to_string()),
                        });
                    }
                }
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| io_err(&log_path, e))?;
        if recovered.dropped_tail_bytes > 0 {
            log.set_len(good_len).map_err(|e| io_err(&log_path, e))?;
        }
        Ok((
            Journal {
                dir: dir.to_path_buf(),
                log,
                len: good_len,
                fsync,
            },
            recovered,
        ))
    }

    pub fn append(&mut self, record: &EventRecord) -> Result<(), StorageError> {
        let mut line = serde_json::to_vec(record).map_err(|e| StorageError(e.to_string()))?;
        line.push(b'\n');
        let result = self.log.write_all(&line).and_then(|_| {
            if self.fsync {
                self.log.sync_data()
            } else {
                Ok(())
            }
        });
        match result {
            Ok(()) => {
                self.len += line.len() as u64;
                Ok(())
            }
            Err(e) => {
                // drop any partial line so later appends stay parseable
                let _ = self.log.set_len(self.len);
                Err(StorageError(e.to_string()))
            }
        }
    }

    /// Writes `state` as the new snapshot, then empties the log.
    pub fn snapshot(&mut self, state: &State, seq: u64, at: Timestamp) -> Result<(), StorageError> {
        let err = |e: std::io::Error| StorageError(e.to_string());
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp).map_err(err)?;
            let body = serde_json::to_vec(&SnapshotFile {
                seq,
                at,
                state: state.clone(),
            })
            .map_err(|e| StorageError(e.to_string()))?;
            f.write_all(&body).map_err(err)?;
            f.sync_all().map_err(err)?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE)).map_err(err)?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        // Every logged record is now covered by the snapshot. A crash before
        // this point is harmless: recovery skips records at or below `seq`.
        self.log.set_len(0).map_err(err)?;
        self.len = 0;
        Ok(())
    }
}

/// Shared handle that lets the engine append while the service snapshots.
#[derive(Debug, Clone)]
pub struct JournalSink(pub Arc<Mutex<Journal>>);

impl JournalSink {
    pub fn new(journal: Journal) -> Self {
        JournalSink(Arc::new(Mutex::new(journal)))
    }

    pub fn snapshot(&self, state: &State, seq: u64, at: Timestamp) -> Result<(), StorageError> {
        self.0.lock().snapshot(state, seq, at)
    }
}

impl EventSink for JournalSink {
    fn append(&mut self, record: &EventRecord) -> Result<(), StorageError> {
        self.0.lock().append(record)
    }
}
