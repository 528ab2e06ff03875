//! Atomic checkpoints with manifest verification.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Counts, RunState, Stage, SupervisionError};
use crate::acquisition::QuotaState;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
const PREV_FILE: &str = "checkpoint.json.prev";
const TMP_FILE: &str = "checkpoint.json.tmp";

/// Durable snapshot of run progress. Carries no wall-clock fields, so
/// rewriting it without progress produces identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub run_id: String,
    pub stage: Stage,
    pub cursors: BTreeMap<Stage, u64>,
    pub quota: QuotaState,
    pub counts: Counts,
    pub manifest: BTreeMap<String, String>,
    pub manifest_hash: String,
    pub last_seq: u64,
}

impl Checkpoint {
    /// Snapshot of `state`. Every item at or below the cursor has cleared
    /// every per-item stage, so all per-item cursors are equal.
    pub fn capture(run_id: &str, stage: Stage, state: &RunState) -> Self {
        let mut quota = state.quota.clone();
        for q in quota.classes.values_mut() {
            q.in_flight = 0;
        }
        let cursors = [Stage::Collect, Stage::Analyze, Stage::Optimize, Stage::Label]
            .into_iter()
            .map(|s| (s, state.cursor))
            .collect();
        Self {
            run_id: run_id.to_string(),
            stage,
            cursors,
            quota,
            counts: state.counts.clone(),
            manifest_hash: manifest_hash(&state.manifest),
            manifest: state.manifest.clone(),
            last_seq: state.last_seq,
        }
    }

    pub fn cursor(&self) -> u64 {
        self.cursors.get(&Stage::Collect).copied().unwrap_or(0)
    }
}

/// SHA-256 over the sorted `rel\tsha\n` lines.
pub fn manifest_hash(manifest: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (rel, sha) in manifest {
        h.update(rel.as_bytes());
        h.update(b"\t");
        h.update(sha.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub(crate) fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Checks manifest entries against disk. Files whose length and mtime match
/// the stamp taken at their last successful hash are trusted.
#[derive(Debug, Default)]
pub struct ManifestVerifier {
    stamps: HashMap<String, (u64, Option<SystemTime>)>,
}

impl ManifestVerifier {
    pub fn verify(&mut self, root: &Path, manifest: &BTreeMap<String, String>, full: bool) -> Result<(), SupervisionError> {
        for (rel, sha) in manifest {
            let path = root.join(rel);
            let meta = std::fs::metadata(&path)
                .map_err(|e| SupervisionError::WorkspaceCorrupt(format!("{rel}: {e}")))?;
            let stamp = (meta.len(), meta.modified().ok());
            if !full && self.stamps.get(rel) == Some(&stamp) {
                continue;
            }
            let got = sha256_file(&path).map_err(|e| SupervisionError::WorkspaceCorrupt(format!("{rel}: {e}")))?;
            if &got != sha {
                return Err(SupervisionError::WorkspaceCorrupt(format!("{rel}: hash {got} != manifest {sha}")));
            }
            self.stamps.insert(rel.clone(), stamp);
        }
        Ok(())
    }
}

/// Verifies the manifest, then replaces `checkpoint.json` atomically. The
/// previous checkpoint is kept as `checkpoint.json.prev`.
pub fn write_checkpoint(
    root: &Path,
    cp: &Checkpoint,
    verifier: &mut ManifestVerifier,
) -> Result<(), SupervisionError> {
    verifier.verify(root, &cp.manifest, false)?;
    let path = root.join(CHECKPOINT_FILE);
    if let Ok(old) = read(&path) {
        if old.run_id == cp.run_id {
            for (stage, &from) in &old.cursors {
                let to = cp.cursors.get(stage).copied().unwrap_or(0);
                if to < from {
                    return Err(SupervisionError::CursorRegression { stage: *stage, from, to });
                }
            }
        }
    }
    let bytes = serde_json::to_vec_pretty(cp).map_err(|e| SupervisionError::Io(e.to_string()))?;
    let tmp = root.join(TMP_FILE);
    let mut f = File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    drop(f);
    if path.exists() {
        std::fs::copy(&path, root.join(PREV_FILE))?;
    }
    std::fs::rename(&tmp, &path)?;
    if let Ok(dir) = File::open(root) {
        let _ = dir.sync_all();
    }
    Ok(())
}

fn read(path: &Path) -> Result<Checkpoint, SupervisionError> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| SupervisionError::Io(format!("{}: {e}", path.display())))
}

/// Latest readable checkpoint, falling back to the previous one.
pub fn load_checkpoint(root: &Path) -> Result<Checkpoint, SupervisionError> {
    let main = root.join(CHECKPOINT_FILE);
    match read(&main) {
        Ok(cp) => Ok(cp),
        Err(e) => {
            let prev = root.join(PREV_FILE);
            if main.exists() {
                log::warn!("checkpoint unreadable ({e}), falling back to previous");
            }
            read(&prev).map_err(|_| SupervisionError::NoCheckpoint)
        }
    }
}
