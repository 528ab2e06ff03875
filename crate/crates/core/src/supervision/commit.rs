//! Staged artifact commits. Bytes land in `staging/` first, a commit event
//! names them, and only then are they renamed into place. Recovery rolls
//! forward any logged commit whose rename did not happen.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::checkpoint::sha256_file;
use super::{Event, SupervisionError};

pub const STAGING_DIR: &str = "staging";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagedArtifact {
    /// Final workspace-relative path.
    pub rel: String,
    pub sha256: String,
    /// Workspace-relative staging path.
    pub tmp: String,
}

/// Writes `bytes` to `staging/<key>.tmp` and syncs it.
pub fn stage_bytes(root: &Path, key: &str, rel: &str, bytes: &[u8]) -> Result<StagedArtifact, SupervisionError> {
    let dir = root.join(STAGING_DIR);
    std::fs::create_dir_all(&dir)?;
    let tmp = format!("{STAGING_DIR}/{}.tmp", key.replace(['/', '\\'], "_"));
    let mut f = File::create(root.join(&tmp))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(StagedArtifact { rel: rel.to_string(), sha256: hex::encode(Sha256::digest(bytes)), tmp })
}

/// Renames each staged file to its final path.
pub fn install(root: &Path, artifacts: &[StagedArtifact]) -> Result<(), SupervisionError> {
    for a in artifacts {
        let dst = root.join(&a.rel);
        if let Some(parent) = dst.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::rename(root.join(&a.tmp), &dst)?;
    }
    Ok(())
}

/// Completes renames for every logged commit, then empties `staging/`.
/// A logged artifact present neither in place nor in staging with the
/// logged hash means the workspace cannot be trusted.
pub fn recover_staging(root: &Path, events: &[Event]) -> Result<usize, SupervisionError> {
    let mut rolled = 0;
    for ev in events.iter().filter(|e| e.kind == "commit" || e.kind == "finalize_commit") {
        let arts: Vec<StagedArtifact> = ev
            .payload
            .get("artifacts")
            .cloned()
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| SupervisionError::WorkspaceCorrupt(format!("event {}: {e}", ev.seq)))?
            .unwrap_or_default();
        for a in arts {
            let dst = root.join(&a.rel);
            if sha256_file(&dst).ok().as_deref() == Some(a.sha256.as_str()) {
                continue;
            }
            let tmp = root.join(&a.tmp);
            if sha256_file(&tmp).ok().as_deref() == Some(a.sha256.as_str()) {
                install(root, std::slice::from_ref(&a))?;
                rolled += 1;
                continue;
            }
            // a later commit may legitimately have overwritten the file
            if overwritten_later(events, ev.seq, &a.rel) {
                continue;
            }
            return Err(SupervisionError::WorkspaceCorrupt(format!("{} missing for event {}", a.rel, ev.seq)));
        }
    }
    clear_staging(root)?;
    Ok(rolled)
}

fn overwritten_later(events: &[Event], seq: u64, rel: &str) -> bool {
    events.iter().filter(|e| e.seq > seq).any(|e| {
        e.payload
            .get("artifacts")
            .and_then(Value::as_array)
            .is_some_and(|a| a.iter().any(|x| x["rel"].as_str() == Some(rel)))
    })
}

pub fn clear_staging(root: &Path) -> Result<(), SupervisionError> {
    let dir = root.join(STAGING_DIR);
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{Agent, Level};
    use super::*;

    fn commit_event(seq: u64, arts: &[StagedArtifact]) -> Event {
        Event {
            seq,
            wall_ms: 0,
            agent: Agent::Supervisor,
            level: Level::Info,
            kind: "commit".into(),
            payload: serde_json::json!({"index": seq, "artifacts": arts}),
        }
    }

    #[test]
    fn logged_commit_rolls_forward() {
        let dir = tempfile::tempdir().unwrap();
        let a = stage_bytes(dir.path(), "1-0", "out/x/a.png", b"abc").unwrap();
        let ev = commit_event(1, std::slice::from_ref(&a));
        assert_eq!(recover_staging(dir.path(), &[ev]).unwrap(), 1);
        assert_eq!(std::fs::read(dir.path().join("out/x/a.png")).unwrap(), b"abc");
        assert!(!dir.path().join(STAGING_DIR).exists());
    }

    #[test]
    fn unlogged_staging_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        stage_bytes(dir.path(), "1-0", "out/a.png", b"abc").unwrap();
        assert_eq!(recover_staging(dir.path(), &[]).unwrap(), 0);
        assert!(!dir.path().join("out/a.png").exists());
    }

    #[test]
    fn installed_commit_is_left_alone_and_missing_one_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let a = stage_bytes(dir.path(), "k", "out/a.png", b"abc").unwrap();
        install(dir.path(), std::slice::from_ref(&a)).unwrap();
        let ev = commit_event(1, std::slice::from_ref(&a));
        assert_eq!(recover_staging(dir.path(), std::slice::from_ref(&ev)).unwrap(), 0);
        std::fs::remove_file(dir.path().join("out/a.png")).unwrap();
        assert!(matches!(recover_staging(dir.path(), &[ev]), Err(SupervisionError::WorkspaceCorrupt(_))));
    }
}
