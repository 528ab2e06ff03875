//! Per-image annotation and the dataset output formats.

pub mod coco;
pub mod masks;
pub mod voc;
pub mod yolo;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::gateway::Detection;
use crate::acquisition::ImageRecord;
use crate::analysis::ImageAnalysis;
use crate::dataset_spec::{DatasetSpec, TaskType};
use crate::gateway::{self, GatewayError, GrounderHandle, MaskResult, PromptSpec, SegmenterHandle};
use crate::image::ImageError;
use crate::raster::{BitMask, LabelMap, RasterError};
use crate::tools::{validate_mask, MaskCheck, Transform};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("class {0:?} is not in the dataset")]
    UnknownClass(String),
    #[error("label value {0} does not fit the mask encoding")]
    TooManyClasses(u32),
    #[error("analysis category {0:?} matches no class")]
    NoMatchingClass(String),
    #[error("malformed label file: {0}")]
    Format(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegVariant {
    Semantic,
    Instance,
    Panoptic,
}

impl SegVariant {
    pub fn for_task(t: TaskType) -> Option<Self> {
        match t {
            TaskType::SemanticSeg => Some(Self::Semantic),
            TaskType::InstanceSeg => Some(Self::Instance),
            TaskType::PanopticSeg => Some(Self::Panoptic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub class: String,
    pub instance_id: u32,
    pub mask: BitMask,
    pub confidence: f64,
}

/// Labels for one image. Class names are canonical spec names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub image_id: String,
    pub class_label: Option<String>,
    pub detections: Vec<Detection>,
    /// Per-pixel class id, 0 = background.
    pub semantic: Option<LabelMap>,
    pub instances: Vec<InstanceMask>,
    /// Per-pixel `class * 1000 + instance`, 0 = void.
    pub panoptic: Option<LabelMap>,
    /// Reasons the image cannot enter the dataset (empty when usable).
    pub flags: Vec<String>,
}

impl AnnotationSet {
    pub fn is_usable(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn min_confidence(&self) -> Option<f64> {
        self.detections
            .iter()
            .map(|d| d.confidence)
            .chain(self.instances.iter().map(|m| m.confidence))
            .min_by(f64::total_cmp)
    }

    /// Follows the pixels through the geometric steps applied by a tool plan.
    pub fn transformed(&self, trace: &[Transform]) -> AnnotationSet {
        let mut out = self.clone();
        for t in trace {
            out.detections = out
                .detections
                .iter()
                .filter_map(|d| t.apply_to_box(&d.bbox).map(|b| Detection::new(d.class.clone(), b, d.confidence)))
                .collect();
            out.semantic = out.semantic.as_ref().map(|m| t.apply_to_map(m));
            out.panoptic = out.panoptic.as_ref().map(|m| t.apply_to_map(m));
            out.instances = out
                .instances
                .iter()
                .map(|m| InstanceMask { mask: t.apply_to_map(&LabelMap::from_mask(&m.mask, 1)).mask_of(1), ..m.clone() })
                .filter(|m| m.mask.area() > 0)
                .collect();
        }
        out
    }
}

/// Tunables for the label stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub min_confidence: f64,
    /// Low-confidence detections at or above this get one box-prompt re-query.
    pub requery_floor: f64,
    pub dedup_iou: f64,
    pub mask_check: MaskCheck,
    pub keep_negatives: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self { min_confidence: 0.5, requery_floor: 0.3, dedup_iou: 0.9, mask_check: MaskCheck::default(), keep_negatives: false }
    }
}

/// Canonical class for an accepted analysis.
pub fn assign_class_label(analysis: &ImageAnalysis, spec: &DatasetSpec) -> Result<String, LabelError> {
    spec.match_class(&analysis.target_category)
        .map(|c| c.name.clone())
        .ok_or_else(|| LabelError::NoMatchingClass(analysis.target_category.clone()))
}

/// Keeps detections with confidence at or above `threshold`, in order.
pub fn filter_by_confidence(detections: Vec<Detection>, threshold: f64) -> Vec<Detection> {
    detections.into_iter().filter(|d| d.confidence >= threshold).collect()
}

/// Drops same-class boxes overlapping a more confident one by more than `iou`.
pub fn deduplicate(mut detections: Vec<Detection>, iou: f64) -> Vec<Detection> {
    detections.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<Detection> = Vec::new();
    for d in detections {
        if !kept.iter().any(|k| k.class == d.class && k.bbox.iou(&d.bbox) > iou) {
            kept.push(d);
        }
    }
    kept
}

pub fn annotate_detection(
    record: &ImageRecord,
    spec: &DatasetSpec,
    grounder: &GrounderHandle,
    cfg: &LabelConfig,
) -> Result<AnnotationSet, GatewayError> {
    let mut all = Vec::new();
    for class in &spec.classes {
        let prompt = PromptSpec::for_class(&class.name, &class.synonyms);
        let found = gateway::ground(grounder, record, &[prompt])?;
        for d in found.detections {
            if !class.matches(&d.class) {
                continue;
            }
            let mut d = Detection::new(class.name.clone(), d.bbox, d.confidence);
            if d.confidence >= cfg.requery_floor && d.confidence < cfg.min_confidence {
                let again = gateway::ground(grounder, record, &[PromptSpec::Box { region: d.bbox }])?;
                if let Some(best) = again.detections.iter().find(|r| class.matches(&r.class) && r.bbox.iou(&d.bbox) > 0.5) {
                    if best.confidence > d.confidence {
                        d = Detection::new(class.name.clone(), best.bbox, best.confidence);
                    }
                }
            }
            all.push(d);
        }
    }
    let detections = deduplicate(filter_by_confidence(all, cfg.min_confidence), cfg.dedup_iou);
    let mut set = AnnotationSet { image_id: record.id.clone(), detections, ..Default::default() };
    if set.detections.is_empty() && !cfg.keep_negatives {
        set.flags.push("unlabeled".into());
    }
    Ok(set)
}

pub fn annotate_segmentation(
    record: &ImageRecord,
    spec: &DatasetSpec,
    segmenter: &SegmenterHandle,
    variant: SegVariant,
    cfg: &LabelConfig,
) -> Result<AnnotationSet, GatewayError> {
    let (w, h) = record.image.dims();
    let mut masks: Vec<(u32, MaskResult)> = Vec::new();
    for class in &spec.classes {
        let prompt = PromptSpec::for_class(&class.name, &class.synonyms);
        let id = spec.class_id(&class.name).expect("class from spec");
        for m in gateway::segment(segmenter, record, &[prompt])?.masks {
            if class.matches(&m.class) && m.confidence >= cfg.min_confidence && m.mask.area() > 0 {
                masks.push((id, MaskResult { class: class.name.clone(), ..m }));
            }
        }
    }
    // paint low confidence first so the most confident mask owns shared pixels
    masks.sort_by(|a, b| a.1.confidence.total_cmp(&b.1.confidence).then(a.1.instance_id.cmp(&b.1.instance_id)));
    let mut set = AnnotationSet { image_id: record.id.clone(), ..Default::default() };
    let paint = |value: &dyn Fn(u32, &MaskResult) -> u32| {
        let mut map = LabelMap::filled(w, h, 0);
        for (id, m) in &masks {
            for y in 0..h {
                for x in 0..w {
                    if m.mask.get(x, y) {
                        map.set(x, y, value(*id, m));
                    }
                }
            }
        }
        map
    };
    let mut violations = Vec::new();
    match variant {
        SegVariant::Semantic => {
            let map = paint(&|id, _| id);
            violations.extend(validate_mask(&map, (w, h), &cfg.mask_check));
            set.semantic = Some(map);
        }
        SegVariant::Instance => {
            let mut inst: Vec<InstanceMask> = masks
                .iter()
                .filter(|(_, m)| !m.stuff)
                .map(|(_, m)| InstanceMask { class: m.class.clone(), instance_id: m.instance_id, mask: m.mask.clone(), confidence: m.confidence })
                .collect();
            inst.sort_by_key(|m| m.instance_id);
            for m in &inst {
                violations.extend(crate::tools::validate_mask_bits(&m.mask, (w, h), &cfg.mask_check));
            }
            set.instances = inst;
        }
        SegVariant::Panoptic => {
            let map = paint(&|id, m| masks::panoptic_id(id, if m.stuff { 0 } else { m.instance_id }));
            violations.extend(validate_mask(&map, (w, h), &cfg.mask_check));
            set.panoptic = Some(map);
        }
    }
    // boxes for detection-style exports come from the masks
    for (_, m) in masks.iter().rev().filter(|(_, m)| !m.stuff) {
        if let Some(b) = m.mask.normalized_bbox() {
            set.detections.push(Detection::new(m.class.clone(), b, m.confidence));
        }
    }
    if masks.is_empty() && !cfg.keep_negatives {
        set.flags.push("unlabeled".into());
    }
    set.flags.extend(violations.into_iter().map(|v| format!("mask-invalid: {v}")));
    Ok(set)
}
