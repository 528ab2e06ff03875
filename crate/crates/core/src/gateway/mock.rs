//! Deterministic offline backends.
//!
//! Vision mocks read a sidecar document stored next to each image
//! (`<stem>.sidecar.json`) and return its content verbatim. Text mocks either
//! replay canned replies keyed by prompt hash, play a fixed script, or apply
//! a small rule set that understands the shipped prompt templates.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{
    Detection, GatewayError, Grounder, GroundingResult, MaskResult, MultimodalModel, PromptSpec, SegmentationResult,
    Segmenter, TextModel,
};
use crate::acquisition::ImageRecord;
use crate::geometry::NormalizedBox;
use crate::prompts::{section, task_of, DEMAND_BLOCK};
use crate::raster::{BitMask, Rle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarDetection {
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: NormalizedBox,
    pub confidence: f64,
    /// Confidence reported when re-queried with a box prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_prompt_confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarMask {
    pub class: String,
    pub instance_id: u32,
    pub confidence: f64,
    pub rle: Rle,
    #[serde(default)]
    pub stuff: bool,
}

/// Ground truth attached to a fixture image.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Sidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detections: Vec<SidecarDetection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masks: Vec<SidecarMask>,
}

pub fn sidecar_path(image_path: &Path) -> PathBuf {
    let stem = image_path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    image_path.with_file_name(format!("{stem}.sidecar.json"))
}

/// Multimodal, grounding and segmentation mock backed by sidecar files.
#[derive(Default)]
pub struct SidecarModels {
    cache: Mutex<HashMap<String, Sidecar>>,
}

impl SidecarModels {
    fn load(&self, record: &ImageRecord) -> Result<Sidecar, GatewayError> {
        if let Some(s) = self.cache.lock().expect("sidecar cache").get(&record.origin_uri) {
            return Ok(s.clone());
        }
        let origin = record.origin_uri.strip_prefix("file://").unwrap_or(&record.origin_uri);
        let path = sidecar_path(Path::new(origin));
        let text = std::fs::read_to_string(&path)
            .map_err(|e| GatewayError::Fixture(format!("no sidecar for {}: {e}", record.id)))?;
        let s: Sidecar =
            serde_json::from_str(&text).map_err(|e| GatewayError::Fixture(format!("{}: {e}", path.display())))?;
        self.cache.lock().expect("sidecar cache").insert(record.origin_uri.clone(), s.clone());
        Ok(s)
    }
}

impl MultimodalModel for SidecarModels {
    fn analyze(&self, record: &ImageRecord, _prompt: &str) -> Result<Value, GatewayError> {
        self.load(record)?
            .analysis
            .ok_or_else(|| GatewayError::Fixture(format!("sidecar for {} has no analysis", record.id)))
    }
}

impl Grounder for SidecarModels {
    fn ground(&self, record: &ImageRecord, prompts: &[PromptSpec]) -> Result<GroundingResult, GatewayError> {
        let side = self.load(record)?;
        let mut detections = Vec::new();
        for d in &side.detections {
            let hit = prompts.iter().find_map(|p| match p {
                PromptSpec::Text { .. } => p.terms().contains(&d.class.to_lowercase()).then_some(d.confidence),
                PromptSpec::Box { region } => (region.iou(&d.bbox) >= 0.5).then(|| d.box_prompt_confidence.unwrap_or(d.confidence)),
                PromptSpec::Point { x, y } => {
                    (*x >= d.bbox.x1() && *x <= d.bbox.x2() && *y >= d.bbox.y1() && *y <= d.bbox.y2()).then_some(d.confidence)
                }
            });
            if let Some(conf) = hit {
                detections.push(Detection::new(d.class.clone(), d.bbox, conf));
            }
        }
        Ok(GroundingResult { detections })
    }
}

impl Segmenter for SidecarModels {
    fn segment(&self, record: &ImageRecord, prompts: &[PromptSpec]) -> Result<SegmentationResult, GatewayError> {
        let side = self.load(record)?;
        let terms: Vec<String> = prompts.iter().flat_map(|p| p.terms()).collect();
        let mut masks = Vec::new();
        for m in side.masks.iter().filter(|m| terms.contains(&m.class.to_lowercase())) {
            let mask = BitMask::from_rle(&m.rle).map_err(|e| GatewayError::Fixture(e.to_string()))?;
            masks.push(MaskResult {
                class: m.class.clone(),
                instance_id: m.instance_id,
                mask,
                confidence: m.confidence,
                stuff: m.stuff,
            });
        }
        Ok(SegmentationResult { masks })
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Replies looked up by SHA-256 of the prompt.
#[derive(Debug, Clone, Default)]
pub struct ReplayTextModel {
    replies: BTreeMap<String, String>,
}

impl ReplayTextModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prompt: &str, reply: impl Into<String>) {
        self.replies.insert(prompt_hash(prompt), reply.into());
    }

    /// JSON object mapping prompt hash to reply.
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Fixture(e.to_string()))?;
        let replies = serde_json::from_str(&text).map_err(|e| GatewayError::Fixture(e.to_string()))?;
        Ok(Self { replies })
    }
}

impl TextModel for ReplayTextModel {
    fn complete_text(&self, prompt: &str) -> Result<String, GatewayError> {
        let h = prompt_hash(prompt);
        self.replies.get(&h).cloned().ok_or_else(|| GatewayError::Fixture(format!("no canned reply for prompt {h}")))
    }
}

/// Returns scripted replies in order and records every prompt.
#[derive(Default)]
pub struct ScriptedTextModel {
    replies: Mutex<VecDeque<Result<String, GatewayError>>>,
    prompts: Mutex<Vec<String>>,
    calls: AtomicUsize,
}

impl ScriptedTextModel {
    pub fn new(replies: impl IntoIterator<Item = Result<String, GatewayError>>) -> Self {
        Self { replies: Mutex::new(replies.into_iter().collect()), ..Default::default() }
    }

    pub fn replies<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(|s| Ok(s.into())))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompts").clone()
    }
}

impl TextModel for ScriptedTextModel {
    fn complete_text(&self, prompt: &str) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().expect("prompts").push(prompt.to_string());
        self.replies
            .lock()
            .expect("replies")
            .pop_front()
            .unwrap_or_else(|| Err(GatewayError::Fixture("script exhausted".into())))
    }
}

struct KnownDataset {
    aliases: &'static [&'static str],
    name: &'static str,
    classes: &'static [&'static str],
    resolution: (u32, u32),
}

const KNOWN: &[KnownDataset] = &[
    KnownDataset {
        aliases: &["cifar-10", "cifar10", "cifar 10"],
        name: "CIFAR-10",
        classes: &["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"],
        resolution: (32, 32),
    },
    KnownDataset {
        aliases: &["stl-10", "stl10", "stl 10"],
        name: "STL-10",
        classes: &["airplane", "car", "bird", "cat", "deer", "dog", "monkey", "horse", "ship", "truck"],
        resolution: (96, 96),
    },
];

/// Rule-based stand-in for a text model, used by `--mock-backends`.
///
/// It recognises the `#task:` header of the shipped templates and answers
/// demand extraction with keyword heuristics, diagnosis with `skip`, and tool
/// planning with an empty plan.
#[derive(Debug, Default)]
pub struct OfflineTextModel;

impl TextModel for OfflineTextModel {
    fn complete_text(&self, prompt: &str) -> Result<String, GatewayError> {
        match task_of(prompt).as_deref() {
            Some("demand_extraction") | Some("schema_repair") => {
                let demand = section(prompt, DEMAND_BLOCK).unwrap_or_default();
                Ok(extract_demand(&demand).to_string())
            }
            Some("failure_diagnosis") => {
                Ok(json!({"resolution": "skip", "rationale": "offline model: no repair available"}).to_string())
            }
            Some("tool_plan") => Ok(json!({"steps": []}).to_string()),
            other => Err(GatewayError::InvalidReply(format!("offline model cannot answer task {other:?}"))),
        }
    }
}

fn extract_demand(demand: &str) -> Value {
    let lower = demand.to_lowercase();
    let relevant = ["dataset", "image", "class", "label", "detect", "segment", "classif", "picture", "photo"]
        .iter()
        .any(|k| lower.contains(k));
    if !relevant {
        return json!({"relevant": false});
    }
    let task_kind = if Regex::new(r"\b(expand|extend|augment|add|grow|enlarge)\b").unwrap().is_match(&lower) {
        Some("expand")
    } else if Regex::new(r"\b(build|create|construct|make|collect|assemble)\b").unwrap().is_match(&lower) {
        Some("build")
    } else {
        None
    };
    let known = KNOWN.iter().find(|k| k.aliases.iter().any(|a| lower.contains(a)));
    let task_type = if lower.contains("panoptic") {
        Some("panoptic_seg")
    } else if lower.contains("instance seg") || lower.contains("instance-seg") {
        Some("instance_seg")
    } else if lower.contains("segment") {
        Some("semantic_seg")
    } else if lower.contains("detect") {
        Some("detection")
    } else if lower.contains("classif") || known.is_some() {
        Some("classification")
    } else {
        None
    };
    let number = |s: &str| s.replace([',', '_'], "").parse::<u64>().ok();
    let per_class = Regex::new(r"(\d[\d,_]*)\s*(?:images?|pictures?|photos?|samples?)?\s*(?:per|each|for each|/|every)\s*(?:class|label|category)")
        .unwrap()
        .captures(&lower)
        .and_then(|c| number(&c[1]))
        .or_else(|| {
            Regex::new(r"(\d[\d,_]*)\s*(?:images?|pictures?|photos?|samples?)\s*(?:each|apiece)")
                .unwrap()
                .captures(&lower)
                .and_then(|c| number(&c[1]))
        });
    let resolution = Regex::new(r"(\d{1,5})\s*[x×]\s*(\d{1,5})")
        .unwrap()
        .captures(&lower)
        .map(|c| json!([c[1].parse::<u32>().unwrap_or(0), c[2].parse::<u32>().unwrap_or(0)]))
        .or_else(|| known.map(|k| json!([k.resolution.0, k.resolution.1])));
    let mut classes: Vec<String> = Vec::new();
    if let Some(idx) = demand.find(':') {
        let tail = &demand[idx + 1..];
        let end = tail.find(['.', ';', '\n']).unwrap_or(tail.len());
        for part in Regex::new(r",|\band\b").unwrap().split(&tail[..end]) {
            let w = part.trim().trim_matches(|c: char| !c.is_alphanumeric() && c != '-' && c != ' ').trim();
            if !w.is_empty() && w.split_whitespace().count() <= 3 {
                classes.push(w.to_string());
            }
        }
    }
    if classes.is_empty() {
        if let Some(k) = known {
            classes = k.classes.iter().map(|s| s.to_string()).collect();
        }
    }
    let mut formats = Vec::new();
    for (kw, f) in [("yolo", "yolo"), ("voc", "voc"), ("coco", "coco"), ("mask", "mask_png")] {
        if lower.contains(kw) {
            formats.push(f);
        }
    }
    json!({
        "relevant": true,
        "task_kind": task_kind,
        "task_type": task_type,
        "dataset_name": known.map(|k| k.name),
        "classes": classes,
        "per_class_target": per_class,
        "target_resolution": resolution,
        "annotation_formats": formats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::PromptSet;

    fn ask(demand: &str) -> Value {
        let p = PromptSet::builtin().demand_extraction(demand, &[], &[]);
        serde_json::from_str(&OfflineTextModel.complete_text(&p).unwrap()).unwrap()
    }

    #[test]
    fn cifar_expansion() {
        let v = ask("expand CIFAR-10, add 5000 images each label");
        assert_eq!(v["task_kind"], "expand");
        assert_eq!(v["task_type"], "classification");
        assert_eq!(v["per_class_target"], 5000);
        assert_eq!(v["classes"].as_array().unwrap().len(), 10);
        assert_eq!(v["target_resolution"], json!([32, 32]));
    }

    #[test]
    fn class_list_after_colon() {
        let v = ask("build 3-class detector: cat, dog, bird");
        assert_eq!(v["task_kind"], "build");
        assert_eq!(v["task_type"], "detection");
        assert_eq!(v["classes"], json!(["cat", "dog", "bird"]));
        assert_eq!(v["per_class_target"], Value::Null);
    }

    #[test]
    fn irrelevant() {
        assert_eq!(ask("what's the weather tomorrow?")["relevant"], false);
    }

    #[test]
    fn replay_by_hash() {
        let mut r = ReplayTextModel::new();
        r.insert("hello", "world");
        assert_eq!(r.complete_text("hello").unwrap(), "world");
        assert!(matches!(r.complete_text("other"), Err(GatewayError::Fixture(_))));
    }

    #[test]
    fn scripted_counts_calls() {
        let s = ScriptedTextModel::replies(["a", "b"]);
        assert_eq!(s.complete_text("p1").unwrap(), "a");
        assert_eq!(s.complete_text("p2").unwrap(), "b");
        assert!(s.complete_text("p3").is_err());
        assert_eq!(s.calls(), 3);
        assert_eq!(s.prompts()[1], "p2");
    }
}
