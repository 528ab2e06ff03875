//! Failure classification and the resolution rule table.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::extract_json;
use crate::gateway::{GatewayError, TextModelHandle};
use crate::prompts::PromptSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    DecodeFailure,
    BackendUnavailable,
    MalformedBackendReply,
    ToolError,
    SchemaViolation,
    Crash,
}

impl FailureCategory {
    pub fn of_gateway(e: &GatewayError) -> Self {
        match e {
            GatewayError::BackendUnavailable(_) | GatewayError::Timeout(_) => Self::BackendUnavailable,
            GatewayError::InvalidReply(_) | GatewayError::Fixture(_) => Self::MalformedBackendReply,
            GatewayError::DimensionMismatch { .. } | GatewayError::Precondition(_) => Self::SchemaViolation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Skip,
    Retry,
    Restart,
    Abort,
}

impl Resolution {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "skip" => Some(Self::Skip),
            "retry" => Some(Self::Retry),
            "restart" => Some(Self::Restart),
            "abort" => Some(Self::Abort),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    /// Sequence number of the Error event describing the failure.
    pub event_seq: u64,
    pub category: FailureCategory,
    pub context: String,
    /// 1 for the first failure of this item and step, 2 for the next, ...
    pub attempt: u32,
}

/// Retries allowed for an unavailable backend before the run aborts.
pub const BACKEND_RETRIES: u32 = 3;

/// Rule-table resolution, or `None` when the category has no rule.
pub fn rule(f: &FailureRecord) -> Option<Resolution> {
    use FailureCategory::*;
    match f.category {
        DecodeFailure => Some(Resolution::Skip),
        BackendUnavailable if f.attempt <= BACKEND_RETRIES => Some(Resolution::Retry),
        BackendUnavailable => Some(Resolution::Abort),
        MalformedBackendReply if f.attempt <= 1 => Some(Resolution::Retry),
        MalformedBackendReply => Some(Resolution::Skip),
        ToolError | Crash if f.attempt <= 1 => Some(Resolution::Restart),
        ToolError | Crash => Some(Resolution::Skip),
        SchemaViolation => None,
    }
}

/// Resolves a failure: rule table first, then the text backend restricted
/// to the four resolutions, then Skip. A repeat of an unruled failure is
/// skipped without asking again.
pub fn diagnose(f: &FailureRecord, backend: Option<(&TextModelHandle, &PromptSet)>) -> Resolution {
    if let Some(r) = rule(f) {
        return r;
    }
    if f.attempt > 1 {
        return Resolution::Skip;
    }
    let Some((h, prompts)) = backend else {
        return Resolution::Skip;
    };
    let failure = serde_json::json!({"category": f.category, "context": f.context, "attempt": f.attempt}).to_string();
    match h.complete_text(&prompts.failure_diagnosis(&failure)) {
        Ok(reply) => suggested(&reply).unwrap_or_else(|| {
            log::warn!("diagnosis reply outside the resolution set: {reply:?}");
            Resolution::Skip
        }),
        Err(e) => {
            log::warn!("diagnosis backend failed: {e}");
            Resolution::Skip
        }
    }
}

fn suggested(reply: &str) -> Option<Resolution> {
    let doc: Value = serde_json::from_str(reply.trim()).ok().or_else(|| extract_json(reply))?;
    Resolution::parse(doc.get("resolution")?.as_str()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Handle, OfflineTextModel, RetryPolicy, ScriptedTextModel, TextModel};
    use std::sync::Arc;

    fn f(category: FailureCategory, attempt: u32) -> FailureRecord {
        FailureRecord { event_seq: 1, category, context: "ctx".into(), attempt }
    }

    fn scripted(reply: &str) -> TextModelHandle {
        Handle::new("t", Arc::new(ScriptedTextModel::replies([reply.to_string()])) as Arc<dyn TextModel>, RetryPolicy::none())
    }

    #[test]
    fn rule_table() {
        use FailureCategory::*;
        assert_eq!(diagnose(&f(DecodeFailure, 1), None), Resolution::Skip);
        for a in 1..=3 {
            assert_eq!(diagnose(&f(BackendUnavailable, a), None), Resolution::Retry);
        }
        assert_eq!(diagnose(&f(BackendUnavailable, 4), None), Resolution::Abort);
        assert_eq!(diagnose(&f(MalformedBackendReply, 1), None), Resolution::Retry);
        assert_eq!(diagnose(&f(MalformedBackendReply, 2), None), Resolution::Skip);
        assert_eq!(diagnose(&f(ToolError, 1), None), Resolution::Restart);
        assert_eq!(diagnose(&f(ToolError, 2), None), Resolution::Skip);
        assert_eq!(diagnose(&f(Crash, 1), None), Resolution::Restart);
    }

    #[test]
    fn unruled_category_asks_the_backend() {
        let p = PromptSet::builtin();
        let h = scripted(r#"{"resolution": "restart", "rationale": "transient"}"#);
        assert_eq!(diagnose(&f(FailureCategory::SchemaViolation, 1), Some((&h, &p))), Resolution::Restart);
    }

    #[test]
    fn backend_suggestion_is_sandboxed() {
        let p = PromptSet::builtin();
        let h = scripted(r#"{"resolution": "rm -rf the workspace"}"#);
        assert_eq!(diagnose(&f(FailureCategory::SchemaViolation, 1), Some((&h, &p))), Resolution::Skip);
        let offline: TextModelHandle = Handle::new("o", Arc::new(OfflineTextModel) as Arc<dyn TextModel>, RetryPolicy::none());
        assert_eq!(diagnose(&f(FailureCategory::SchemaViolation, 1), Some((&offline, &p))), Resolution::Skip);
        assert_eq!(diagnose(&f(FailureCategory::SchemaViolation, 1), None), Resolution::Skip);
    }

    #[test]
    fn every_category_gets_a_resolution() {
        use FailureCategory::*;
        for c in [DecodeFailure, BackendUnavailable, MalformedBackendReply, ToolError, SchemaViolation, Crash] {
            for a in 1..6 {
                let _ = diagnose(&f(c, a), None);
            }
        }
    }
}
