//! Run supervision: the event log, checkpoints, the staged commit protocol,
//! failure diagnosis and worker scheduling.

mod checkpoint;
mod commit;
mod diagnose;
mod events;
mod schedule;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::acquisition::{Outcome, QuotaState};

pub use checkpoint::{load_checkpoint, manifest_hash, write_checkpoint, Checkpoint, ManifestVerifier};
pub use commit::{clear_staging, install, recover_staging, stage_bytes, StagedArtifact};
pub use diagnose::{diagnose, rule, FailureCategory, FailureRecord, Resolution, BACKEND_RETRIES};
pub use events::{read_events, Agent, Event, EventLog, Level};
pub use schedule::schedule;

#[derive(Debug, Error)]
pub enum SupervisionError {
    #[error("event log unwritable: {0}")]
    LogUnwritable(String),
    #[error("workspace corrupt: {0}")]
    WorkspaceCorrupt(String),
    #[error("no checkpoint in workspace")]
    NoCheckpoint,
    #[error("cursor for {stage:?} would move back from {from} to {to}")]
    CursorRegression { stage: Stage, from: u64, to: u64 },
    #[error("injected crash at hook call {0}")]
    InjectedCrash(u64),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for SupervisionError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Collect,
    Analyze,
    Optimize,
    Label,
    Finalize,
}

/// Deterministic crash injection. `hook` fails on its `kill_at`-th call,
/// counting only calls at `point` when one is named.
#[derive(Debug, Default)]
pub struct CrashPlan {
    pub kill_at: Option<u64>,
    pub point: Option<String>,
    calls: AtomicU64,
}

impl CrashPlan {
    pub fn never() -> Self {
        Self::default()
    }

    pub fn at(n: u64) -> Self {
        Self { kill_at: Some(n), point: None, calls: AtomicU64::new(0) }
    }

    /// Fails on the `n`-th call at the named hook.
    pub fn at_point(point: &str, n: u64) -> Self {
        Self { kill_at: Some(n), point: Some(point.to_string()), calls: AtomicU64::new(0) }
    }

    pub fn hook(&self, point: &str) -> Result<(), SupervisionError> {
        if self.point.as_deref().is_some_and(|p| p != point) {
            return Ok(());
        }
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        if self.kill_at == Some(n) {
            log::warn!("injected crash at {point} (call {n})");
            return Err(SupervisionError::InjectedCrash(n));
        }
        Ok(())
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    /// Entries fetched and resolved, decodable or not.
    pub consumed: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub skipped: u64,
    pub passed_over: u64,
}

/// Run state reconstructed from a checkpoint plus later events.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    /// Highest source index with a logged outcome; all lower ones have one too.
    pub cursor: u64,
    pub quota: QuotaState,
    pub counts: Counts,
    /// Workspace-relative path to SHA-256 of every committed artifact.
    pub manifest: BTreeMap<String, String>,
    pub last_seq: u64,
    pub completed: bool,
    pub finalized: bool,
}

impl RunState {
    pub fn new(quota: QuotaState) -> Self {
        Self {
            cursor: 0,
            quota,
            counts: Counts::default(),
            manifest: BTreeMap::new(),
            last_seq: 0,
            completed: false,
            finalized: false,
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Self {
        let mut quota = cp.quota.clone();
        for q in quota.classes.values_mut() {
            q.in_flight = 0;
        }
        Self {
            cursor: cp.cursor(),
            quota,
            counts: cp.counts.clone(),
            manifest: cp.manifest.clone(),
            last_seq: cp.last_seq,
            completed: false,
            finalized: cp.stage == Stage::Finalize,
        }
    }

    /// Applies one event. Events at or before `last_seq` are ignored.
    pub fn apply(&mut self, ev: &Event) {
        if ev.seq <= self.last_seq {
            return;
        }
        self.last_seq = ev.seq;
        let p = &ev.payload;
        let index = p.get("index").and_then(Value::as_u64);
        let class = p.get("class").and_then(Value::as_str);
        match ev.kind.as_str() {
            "commit" => {
                self.counts.consumed += 1;
                self.counts.accepted += 1;
                if let Some(c) = class {
                    let _ = self.quota.update(c, Outcome::Accepted);
                }
                self.add_artifacts(p);
            }
            "reject" => {
                self.counts.consumed += 1;
                self.counts.rejected += 1;
                if let Some(c) = class {
                    let _ = self.quota.update(c, Outcome::Rejected);
                }
            }
            "skip" => {
                self.counts.consumed += 1;
                self.counts.skipped += 1;
            }
            "pass_over" => self.counts.passed_over += 1,
            "finalize_commit" => {
                self.add_artifacts(p);
                self.finalized = true;
            }
            "run_completed" => self.completed = true,
            _ => {}
        }
        if matches!(ev.kind.as_str(), "commit" | "reject" | "skip" | "pass_over") {
            if let Some(i) = index {
                self.cursor = self.cursor.max(i);
            }
        }
    }

    fn add_artifacts(&mut self, p: &Value) {
        for a in p.get("artifacts").and_then(Value::as_array).into_iter().flatten() {
            if let (Some(rel), Some(sha)) = (a["rel"].as_str(), a["sha256"].as_str()) {
                self.manifest.insert(rel.to_string(), sha.to_string());
            }
        }
    }
}

/// Pure fold of events over an optional checkpoint.
pub fn fold_state(initial: RunState, events: &[Event]) -> RunState {
    let mut s = initial;
    for ev in events {
        s.apply(ev);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ev(seq: u64, kind: &str, payload: Value) -> Event {
        Event { seq, wall_ms: 0, agent: Agent::Supervisor, level: Level::Info, kind: kind.into(), payload }
    }

    fn quota() -> QuotaState {
        QuotaState::new([("cat".to_string(), 2), ("dog".to_string(), 2)], 1.2)
    }

    #[test]
    fn crash_plan_fires_once_at_n() {
        let p = CrashPlan::at(3);
        assert!(p.hook("a").is_ok());
        assert!(p.hook("b").is_ok());
        assert!(matches!(p.hook("c"), Err(SupervisionError::InjectedCrash(3))));
        assert!(p.hook("d").is_ok());
        assert!(CrashPlan::never().hook("x").is_ok());
        let named = CrashPlan::at_point("b", 2);
        assert!(named.hook("a").is_ok() && named.hook("b").is_ok() && named.hook("a").is_ok());
        assert!(named.hook("b").is_err());
    }

    #[test]
    fn fold_counts_outcomes() {
        let events = vec![
            ev(1, "commit", json!({"index": 1, "class": "cat", "artifacts": [{"rel": "out/cat/a.png", "sha256": "aa"}]})),
            ev(2, "reject", json!({"index": 2, "class": "dog"})),
            ev(3, "decode_failure", json!({"index": 3})),
            ev(4, "skip", json!({"index": 3})),
            ev(5, "pass_over", json!({"index": 4})),
        ];
        let s = fold_state(RunState::new(quota()), &events);
        assert_eq!(s.cursor, 4);
        assert_eq!(s.counts, Counts { consumed: 3, accepted: 1, rejected: 1, skipped: 1, passed_over: 1 });
        assert_eq!(s.counts.accepted, s.counts.consumed - s.counts.rejected - s.counts.skipped);
        assert_eq!(s.quota.classes["cat"].accepted, 1);
        assert_eq!(s.quota.classes["dog"].rejected, 1);
        assert_eq!(s.manifest["out/cat/a.png"], "aa");
        assert_eq!(s.last_seq, 5);
    }

    #[test]
    fn fold_is_split_invariant() {
        let events: Vec<Event> = (1..=10)
            .map(|i| {
                let kind = if i % 3 == 0 { "reject" } else { "commit" };
                ev(i, kind, json!({"index": i, "class": "cat", "artifacts": [{"rel": format!("f{i}"), "sha256": "x"}]}))
            })
            .collect();
        let whole = fold_state(RunState::new(quota()), &events);
        for k in 0..=events.len() {
            let first = fold_state(RunState::new(quota()), &events[..k]);
            let cp = Checkpoint::capture("r", Stage::Collect, &first);
            let resumed = fold_state(RunState::from_checkpoint(&cp), &events);
            assert_eq!(resumed, whole, "split at {k}");
        }
    }
}
