//! The parsed user demand and its invariants.

use std::collections::{BTreeSet, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::acquisition::SourceDescriptor;
use crate::violation::Violation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Build,
    Expand,
}

impl TaskKind {
    pub fn parse_loose(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "build" | "create" | "construct" | "new" => Some(Self::Build),
            "expand" | "extend" | "augment" | "grow" => Some(Self::Expand),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Classification,
    Detection,
    SemanticSeg,
    InstanceSeg,
    PanopticSeg,
}

impl TaskType {
    pub fn parse_loose(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        match s.as_str() {
            "classification" | "classify" | "image_classification" => Some(Self::Classification),
            "detection" | "object_detection" | "detect" => Some(Self::Detection),
            "semantic_seg" | "semantic_segmentation" | "segmentation" | "semantic" => {
                Some(Self::SemanticSeg)
            }
            "instance_seg" | "instance_segmentation" | "instance" => Some(Self::InstanceSeg),
            "panoptic_seg" | "panoptic_segmentation" | "panoptic" => Some(Self::PanopticSeg),
            _ => None,
        }
    }

    pub fn is_segmentation(&self) -> bool {
        matches!(self, Self::SemanticSeg | Self::InstanceSeg | Self::PanopticSeg)
    }

    pub fn default_formats(&self) -> BTreeSet<AnnotationFormat> {
        match self {
            Self::Classification => [AnnotationFormat::ClassDirs].into(),
            Self::Detection => [AnnotationFormat::Yolo, AnnotationFormat::Voc, AnnotationFormat::Coco].into(),
            Self::SemanticSeg => [AnnotationFormat::MaskPng].into(),
            Self::InstanceSeg | Self::PanopticSeg => [AnnotationFormat::MaskPng, AnnotationFormat::Coco].into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationFormat {
    ClassDirs,
    Yolo,
    Voc,
    Coco,
    MaskPng,
}

impl AnnotationFormat {
    pub fn parse_loose(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "class_dirs" | "classdirs" | "folders" | "directories" => Some(Self::ClassDirs),
            "yolo" => Some(Self::Yolo),
            "voc" | "pascal_voc" => Some(Self::Voc),
            "coco" | "ms_coco" => Some(Self::Coco),
            "mask_png" | "maskpng" | "masks" | "png" => Some(Self::MaskPng),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDef {
    pub name: String,
    pub target_count: u64,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

impl ClassDef {
    pub fn new(name: impl Into<String>, target_count: u64) -> Self {
        Self { name: name.into(), target_count, synonyms: Vec::new() }
    }

    pub fn with_synonyms(mut self, synonyms: &[&str]) -> Self {
        self.synonyms = synonyms.iter().map(|s| s.to_string()).collect();
        self
    }

    /// Case-folded match against the name or any synonym.
    pub fn matches(&self, label: &str) -> bool {
        let label = fold(label);
        fold(&self.name) == label || self.synonyms.iter().any(|s| fold(s) == label)
    }
}

pub(crate) fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityConstraints {
    pub min_resolution: (u32, u32),
    pub max_risk_score: f64,
    pub min_alignment_score: f64,
    pub min_confidence: f64,
}

impl Default for QualityConstraints {
    fn default() -> Self {
        Self { min_resolution: (1, 1), max_risk_score: 0.5, min_alignment_score: 0.5, min_confidence: 0.5 }
    }
}

/// Where images come from and, for Expand, the dataset being grown.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataSources {
    #[serde(default)]
    pub corpus: Option<SourceDescriptor>,
    #[serde(default)]
    pub existing_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub task_kind: TaskKind,
    pub task_type: TaskType,
    pub classes: Vec<ClassDef>,
    pub target_resolution: Option<(u32, u32)>,
    pub annotation_formats: BTreeSet<AnnotationFormat>,
    pub per_class_target: u64,
    #[serde(default)]
    pub source: DataSources,
    #[serde(default)]
    pub quality_constraints: QualityConstraints,
    #[serde(default)]
    pub context_docs: Vec<String>,
}

impl DatasetSpec {
    /// Position (1-based) of a class; 0 is reserved for background.
    pub fn class_id(&self, name: &str) -> Option<u32> {
        self.classes.iter().position(|c| c.name == name).map(|i| i as u32 + 1)
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// The spec class whose name or synonym matches `label`.
    pub fn match_class(&self, label: &str) -> Option<&ClassDef> {
        self.classes.iter().find(|c| fold(&c.name) == fold(label)).or_else(|| self.classes.iter().find(|c| c.matches(label)))
    }
}

/// Every broken invariant of `spec`; empty iff the spec is valid.
pub fn validate_spec(spec: &DatasetSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if spec.classes.is_empty() {
        out.push(Violation::new("classes", "non-empty"));
    }
    let mut seen = HashSet::new();
    for (i, c) in spec.classes.iter().enumerate() {
        if c.name.trim().is_empty() {
            out.push(Violation::new(format!("classes[{i}].name"), "non-empty"));
        } else if !seen.insert(fold(&c.name)) {
            out.push(Violation::new("classes", "uniqueness").with_detail(c.name.clone()));
        }
    }
    if spec.per_class_target < 1 {
        out.push(Violation::new("per_class_target", "min").with_detail("must be >= 1"));
    }
    if spec.task_kind == TaskKind::Expand && spec.source.existing_root.is_none() {
        out.push(Violation::new("source", "missing-root"));
    }
    if spec.task_type == TaskType::Classification
        && spec.annotation_formats.iter().any(|f| *f != AnnotationFormat::ClassDirs)
    {
        out.push(Violation::new("annotation_formats", "classification-formats"));
    }
    if spec.task_type.is_segmentation() && !spec.annotation_formats.contains(&AnnotationFormat::MaskPng) {
        out.push(Violation::new("annotation_formats", "mask-required"));
    }
    if let Some((w, h)) = spec.target_resolution {
        if w == 0 || h == 0 {
            out.push(Violation::new("target_resolution", "positive"));
        }
    }
    let q = &spec.quality_constraints;
    if q.min_resolution.0 == 0 || q.min_resolution.1 == 0 {
        out.push(Violation::new("quality_constraints.min_resolution", "positive"));
    }
    for (name, v) in [
        ("quality_constraints.max_risk_score", q.max_risk_score),
        ("quality_constraints.min_alignment_score", q.min_alignment_score),
        ("quality_constraints.min_confidence", q.min_confidence),
    ] {
        if !(0.0..=1.0).contains(&v) {
            out.push(Violation::new(name, "range"));
        }
    }
    out
}
