//! Append-only newline-delimited JSON event log.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SupervisionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Demand,
    Process,
    Label,
    Supervisor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Info,
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub wall_ms: u64,
    pub agent: Agent,
    pub level: Level,
    pub kind: String,
    pub payload: Value,
}

/// Single-writer handle on `run.log`.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

fn unwritable(path: &Path, e: impl std::fmt::Display) -> SupervisionError {
    SupervisionError::LogUnwritable(format!("{}: {e}", path.display()))
}

impl EventLog {
    /// Opens or creates the log. A torn final line left by a crash is cut
    /// off so the next append starts on a clean line.
    pub fn open(path: &Path) -> Result<Self, SupervisionError> {
        let mut last_seq = 0;
        let mut good_len = 0u64;
        if path.exists() {
            let bytes = std::fs::read(path).map_err(|e| unwritable(path, e))?;
            let mut offset = 0usize;
            for line in bytes.split_inclusive(|b| *b == b'\n') {
                if !line.ends_with(b"\n") {
                    break;
                }
                match serde_json::from_slice::<Event>(&line[..line.len() - 1]) {
                    Ok(ev) => last_seq = ev.seq,
                    Err(_) => break,
                }
                offset += line.len();
            }
            good_len = offset as u64;
            if good_len < bytes.len() as u64 {
                log::warn!("truncating torn tail of {}", path.display());
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| unwritable(path, e))?;
        file.set_len(good_len).map_err(|e| unwritable(path, e))?;
        Ok(Self { path: path.to_path_buf(), file, next_seq: last_seq + 1 })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Appends and syncs one event, returning its sequence number.
    pub fn record(&mut self, agent: Agent, level: Level, kind: &str, payload: Value) -> Result<u64, SupervisionError> {
        let wall_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let ev = Event { seq: self.next_seq, wall_ms, agent, level, kind: kind.to_string(), payload };
        let mut line = serde_json::to_vec(&ev).map_err(|e| unwritable(&self.path, e))?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| unwritable(&self.path, e))?;
        self.file.sync_data().map_err(|e| unwritable(&self.path, e))?;
        match level {
            Level::Error => log::error!("[{}] {kind} {}", ev.seq, ev.payload),
            Level::Warn => log::warn!("[{}] {kind} {}", ev.seq, ev.payload),
            Level::Info => log::debug!("[{}] {kind} {}", ev.seq, ev.payload),
        }
        self.next_seq += 1;
        Ok(ev.seq)
    }
}

/// Every complete event in the log, in order.
pub fn read_events(path: &Path) -> Result<Vec<Event>, SupervisionError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(unwritable(path, e)),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| unwritable(path, e))?;
        match serde_json::from_str::<Event>(&line) {
            Ok(ev) => out.push(ev),
            Err(_) => break,
        }
    }
    Ok(out)
}
