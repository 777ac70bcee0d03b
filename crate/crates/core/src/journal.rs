//! Append-only command journal, one JSON record per line.
//!
//! Only state-changing commands are written. Replaying them in order through
//! a fresh engine reproduces the calendar and fabric exactly.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::{ChannelKind, UserId};
use crate::scheduler::{ReservationDraft, ReservationId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalRecord {
    Submit { draft: ReservationDraft, now_ms: u64 },
    Cancel { id: ReservationId, now_ms: u64 },
    Tick { now_ms: u64 },
    Override { kind: ChannelKind, channel: u8, user: Option<UserId> },
}

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("journal {path} line {line}: {detail}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

pub struct Journal {
    path: PathBuf,
    file: File,
}

impl std::fmt::Debug for Journal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Journal").field("path", &self.path).finish()
    }
}

impl Journal {
    /// Opens (creating if needed) and reads back every record. A partial last
    /// line left by a crash mid-write is cut off; damage anywhere else is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<(Journal, Vec<JournalRecord>), JournalError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| JournalError::Io {
            path: path.clone(),
            source,
        };
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_err)?;

        let mut records = Vec::new();
        let mut good_len = 0u64;
        let mut torn = false;
        {
            let mut reader = BufReader::new(&file);
            let mut line = String::new();
            let mut lineno = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(io_err)?;
                if n == 0 {
                    break;
                }
                lineno += 1;
                // a record without its newline was never acknowledged
                if !line.ends_with('\n') {
                    torn = true;
                    break;
                }
                let text = line.trim_end();
                if text.is_empty() {
                    good_len += n as u64;
                    continue;
                }
                match serde_json::from_str::<JournalRecord>(text) {
                    Ok(r) => {
                        records.push(r);
                        good_len += n as u64;
                    }
                    Err(e) => {
                        return Err(JournalError::Corrupt {
                            path: path.clone(),
                            line: lineno,
                            detail: e.to_string(),
                        })
                    }
                }
            }
        }
        if torn {
            file.set_len(good_len).map_err(io_err)?;
            file.sync_data().map_err(io_err)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io_err)?;
        Ok((Journal { path, file }, records))
    }

    /// Appends one record and waits until it is on stable storage.
    pub fn append(&mut self, record: &JournalRecord) -> Result<(), JournalError> {
        let mut line = serde_json::to_string(record).expect("journal record serializes");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(|source| JournalError::Io {
                path: self.path.clone(),
                source,
            })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
