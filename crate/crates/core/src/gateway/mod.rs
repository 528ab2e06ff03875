//! Uniform handles over external model services.
//!
//! Four backend roles exist: a text model, a multimodal analyser, a grounder
//! (boxes from prompts) and a segmenter (masks from prompts). Each role is a
//! trait with an HTTP implementation and deterministic offline mocks. A
//! [`Handle`] adds retry with exponential backoff; the free functions
//! [`ground`] and [`segment`] enforce the pre/postconditions every backend
//! must honour.

mod http;
mod mock;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpConfig, HttpGrounder, HttpMultimodal, HttpSegmenter, HttpText, ENV_GROUND, ENV_MM, ENV_SEG, ENV_TEXT};
pub use mock::{
    sidecar_path, OfflineTextModel, ReplayTextModel, ScriptedTextModel, Sidecar, SidecarDetection, SidecarMask,
    SidecarModels,
};

use crate::acquisition::ImageRecord;
use crate::geometry::NormalizedBox;
use crate::raster::BitMask;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend timed out: {0}")]
    Timeout(String),
    #[error("mask {class}#{instance_id} is {got:?}, image is {expected:?}")]
    DimensionMismatch { class: String, instance_id: u32, expected: (u32, u32), got: (u32, u32) },
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("backend reply invalid: {0}")]
    InvalidReply(String),
    #[error("fixture: {0}")]
    Fixture(String),
}

impl GatewayError {
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::BackendUnavailable(_) | Self::Timeout(_))
    }
}

/// Prompt given to a grounder or segmenter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptSpec {
    /// Class name and synonyms, separated by " . ".
    Text { text: String },
    Point { x: f64, y: f64 },
    Box {
        #[serde(rename = "box")]
        region: NormalizedBox,
    },
}

impl PromptSpec {
    pub fn text(t: impl Into<String>) -> Self {
        Self::Text { text: t.into() }
    }

    /// Text prompt naming a class and its synonyms.
    pub fn for_class(name: &str, synonyms: &[String]) -> Self {
        let mut parts = vec![name.to_string()];
        parts.extend(synonyms.iter().cloned());
        Self::text(parts.join(" . "))
    }

    pub fn terms(&self) -> Vec<String> {
        match self {
            Self::Text { text } => text.split(" . ").map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()).collect(),
            _ => Vec::new(),
        }
    }

    fn validate(&self) -> Result<(), GatewayError> {
        match self {
            Self::Point { x, y } if !((0.0..=1.0).contains(x) && (0.0..=1.0).contains(y)) => {
                Err(GatewayError::Precondition(format!("point ({x}, {y}) outside [0,1]")))
            }
            Self::Text { text } if text.trim().is_empty() => Err(GatewayError::Precondition("empty text prompt".into())),
            _ => Ok(()),
        }
    }
}

/// One box from a grounder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: NormalizedBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(class: impl Into<String>, bbox: NormalizedBox, confidence: f64) -> Self {
        Self { class: class.into(), bbox, confidence }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundingResult {
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskResult {
    pub class: String,
    pub instance_id: u32,
    pub mask: BitMask,
    pub confidence: f64,
    /// Amorphous region (sky, road); carries instance 0 in panoptic output.
    pub stuff: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentationResult {
    pub masks: Vec<MaskResult>,
}

pub trait TextModel: Send + Sync {
    fn complete_text(&self, prompt: &str) -> Result<String, GatewayError>;
}

pub trait MultimodalModel: Send + Sync {
    fn analyze(&self, record: &ImageRecord, prompt: &str) -> Result<serde_json::Value, GatewayError>;
}

pub trait Grounder: Send + Sync {
    fn ground(&self, record: &ImageRecord, prompts: &[PromptSpec]) -> Result<GroundingResult, GatewayError>;
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, record: &ImageRecord, prompts: &[PromptSpec]) -> Result<SegmentationResult, GatewayError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, base_delay_ms: 200, factor: 2.0 }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { max_retries: 0, base_delay_ms: 0, factor: 1.0 }
    }

    /// Runs `op` until it succeeds, fails permanently, or `1 + max_retries` attempts are spent.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut delay = self.base_delay_ms as f64;
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    attempt += 1;
                    log::warn!("transient backend error (attempt {attempt}): {e}");
                    if delay > 0.0 {
                        std::thread::sleep(Duration::from_millis(delay as u64));
                    }
                    delay *= self.factor;
                }
                other => return other,
            }
        }
    }
}

/// A backend plus its name and retry policy. Cheap to clone and share.
pub struct Handle<B: ?Sized> {
    pub name: String,
    pub retry: RetryPolicy,
    backend: Arc<B>,
}

impl<B: ?Sized> Clone for Handle<B> {
    fn clone(&self) -> Self {
        Self { name: self.name.clone(), retry: self.retry.clone(), backend: Arc::clone(&self.backend) }
    }
}

impl<B: ?Sized> Handle<B> {
    pub fn new(name: impl Into<String>, backend: Arc<B>, retry: RetryPolicy) -> Self {
        Self { name: name.into(), retry, backend }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }
}

pub type TextModelHandle = Handle<dyn TextModel>;
pub type MultimodalHandle = Handle<dyn MultimodalModel>;
pub type GrounderHandle = Handle<dyn Grounder>;
pub type SegmenterHandle = Handle<dyn Segmenter>;

impl Handle<dyn TextModel> {
    pub fn complete_text(&self, prompt: &str) -> Result<String, GatewayError> {
        self.retry.run(|| self.backend.complete_text(prompt))
    }
}

impl Handle<dyn MultimodalModel> {
    pub fn analyze_multimodal(&self, record: &ImageRecord, prompt: &str) -> Result<serde_json::Value, GatewayError> {
        self.retry.run(|| self.backend.analyze(record, prompt))
    }
}

/// Grounds `prompts`; detections come back sorted by descending confidence, unfiltered.
pub fn ground(h: &GrounderHandle, record: &ImageRecord, prompts: &[PromptSpec]) -> Result<GroundingResult, GatewayError> {
    if prompts.is_empty() {
        return Err(GatewayError::Precondition("at least one prompt is required".into()));
    }
    prompts.iter().try_for_each(PromptSpec::validate)?;
    let mut r = h.retry.run(|| h.backend.ground(record, prompts))?;
    for d in &r.detections {
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(GatewayError::InvalidReply(format!("confidence {} outside [0,1]", d.confidence)));
        }
    }
    r.detections.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(r)
}

/// Segments `prompts`; every mask must match the image dimensions and carry a unique instance id.
pub fn segment(h: &SegmenterHandle, record: &ImageRecord, prompts: &[PromptSpec]) -> Result<SegmentationResult, GatewayError> {
    if prompts.is_empty() {
        return Err(GatewayError::Precondition("at least one prompt is required".into()));
    }
    prompts.iter().try_for_each(PromptSpec::validate)?;
    let r = h.retry.run(|| h.backend.segment(record, prompts))?;
    let dims = record.image.dims();
    let mut ids = std::collections::HashSet::new();
    for m in &r.masks {
        if m.mask.dims() != dims {
            return Err(GatewayError::DimensionMismatch {
                class: m.class.clone(),
                instance_id: m.instance_id,
                expected: dims,
                got: m.mask.dims(),
            });
        }
        if !ids.insert(m.instance_id) {
            return Err(GatewayError::InvalidReply(format!("instance id {} repeated", m.instance_id)));
        }
        if !(0.0..=1.0).contains(&m.confidence) {
            return Err(GatewayError::InvalidReply(format!("confidence {} outside [0,1]", m.confidence)));
        }
    }
    Ok(r)
}

/// The four handles a run needs.
#[derive(Clone)]
pub struct Gateway {
    pub text: TextModelHandle,
    pub multimodal: MultimodalHandle,
    pub grounder: GrounderHandle,
    pub segmenter: SegmenterHandle,
}

impl Gateway {
    /// Offline backends: heuristic text model plus sidecar-reading vision mocks.
    pub fn mock(retry: RetryPolicy) -> Self {
        let side = Arc::new(SidecarModels::default());
        Self {
            text: Handle::new("offline-text", Arc::new(OfflineTextModel) as Arc<dyn TextModel>, retry.clone()),
            multimodal: Handle::new("sidecar-mm", side.clone() as Arc<dyn MultimodalModel>, retry.clone()),
            grounder: Handle::new("sidecar-ground", side.clone() as Arc<dyn Grounder>, retry.clone()),
            segmenter: Handle::new("sidecar-seg", side as Arc<dyn Segmenter>, retry),
        }
    }

    pub fn with_text(mut self, text: Arc<dyn TextModel>) -> Self {
        self.text = Handle::new("custom-text", text, self.text.retry.clone());
        self
    }

    /// HTTP backends from configuration, falling back to the documented environment variables.
    pub fn http(cfg: &HttpConfig, retry: RetryPolicy) -> Result<Self, GatewayError> {
        Ok(Self {
            text: Handle::new("http-text", Arc::new(HttpText::new(cfg.resolve(ENV_TEXT)?)) as Arc<dyn TextModel>, retry.clone()),
            multimodal: Handle::new("http-mm", Arc::new(HttpMultimodal::new(cfg.resolve(ENV_MM)?)) as Arc<dyn MultimodalModel>, retry.clone()),
            grounder: Handle::new("http-ground", Arc::new(HttpGrounder::new(cfg.resolve(ENV_GROUND)?)) as Arc<dyn Grounder>, retry.clone()),
            segmenter: Handle::new("http-seg", Arc::new(HttpSegmenter::new(cfg.resolve(ENV_SEG)?)) as Arc<dyn Segmenter>, retry),
        })
    }
}
