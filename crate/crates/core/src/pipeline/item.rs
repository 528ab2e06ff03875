//! Per-image work: analyze, optimize and label one record, then build the
//! files its commit will install. Everything here is a pure function of the
//! record, the spec, the config and the (mock or live) backends.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::acquisition::ImageRecord;
use crate::analysis::{self, extract_json, AnalysisError, Decision, ImageAnalysis};
use crate::dataset_spec::{AnnotationFormat, DatasetSpec, TaskType};
use crate::gateway::Gateway;
use crate::geometry::PixelRect;
use crate::image::Image;
use crate::labeling::{
    self,
    masks::{emit_instance_png, emit_panoptic_png, emit_semantic_png, split_panoptic_id},
    voc::{build_voc, emit_voc},
    yolo::emit_yolo,
    AnnotationSet, LabelConfig, SegVariant,
};
use crate::metrics::{esi_for_mask, ssim, MetricError};
use crate::prompts::PromptSet;
use crate::raster::{LabelMap, Rle};
use crate::supervision::{FailureCategory, Stage};
use crate::tools::{apply_plan, resize, AugmentSpec, Interpolation, ToolCall, ToolPlan, Transform};

use super::config::RunConfig;

/// Per-image facts kept in `metadata.jsonl` and used by the report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageEntry {
    pub id: String,
    /// Path relative to the dataset root.
    pub file: String,
    pub class: String,
    pub classes_present: Vec<String>,
    pub source_id: String,
    pub origin_uri: String,
    /// Crop applied to the source frame, in source pixels.
    pub crop: Option<PixelRect>,
    pub ssim: Option<f64>,
    pub occlusion_level: Option<f64>,
    pub instances: Vec<InstanceInfo>,
    pub esi: Option<f64>,
    pub pixel_counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceInfo {
    pub class: String,
    /// Pixels covered by the box or mask.
    pub area: u64,
}

/// A COCO annotation before ids are assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoSeed {
    pub category: String,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Rle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_area: Option<u64>,
    pub score: f64,
}

/// Everything about one committed image, stored at `records/<index>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub index: u64,
    pub entry: ImageEntry,
    pub dims: (u32, u32),
    pub decision: Decision,
    pub plan: ToolPlan,
    pub coco: Vec<CocoSeed>,
}

#[derive(Debug, Clone)]
pub struct Accepted {
    pub class: String,
    pub record: ItemRecord,
    /// Workspace-relative path and bytes, record file last.
    pub files: Vec<(String, Vec<u8>)>,
    pub analysis: Value,
}

#[derive(Debug, Clone)]
pub enum ItemOutcome {
    Accept(Box<Accepted>),
    Reject { class: Option<String>, gate: String, reason: String, analysis: Option<Value> },
    Fail { stage: Stage, category: FailureCategory, context: String, analysis: Option<Value> },
}

impl ItemOutcome {
    fn fail(stage: Stage, category: FailureCategory, context: impl Into<String>) -> Self {
        Self::Fail { stage, category, context: context.into(), analysis: None }
    }

    pub fn analysis(&self) -> Option<&Value> {
        match self {
            Self::Accept(a) => Some(&a.analysis),
            Self::Reject { analysis, .. } | Self::Fail { analysis, .. } => analysis.as_ref(),
        }
    }
}

/// Shared, read-only inputs for every worker.
#[derive(Clone)]
pub struct ItemContext {
    pub spec: Arc<DatasetSpec>,
    pub gateway: Gateway,
    pub prompts: Arc<PromptSet>,
    pub cfg: Arc<RunConfig>,
    pub label_cfg: LabelConfig,
    /// Output subdirectory, `out` for every run.
    pub out_dir: String,
}

impl ItemContext {
    pub fn new(spec: DatasetSpec, gateway: Gateway, prompts: PromptSet, cfg: RunConfig) -> Self {
        let label_cfg = cfg.label_config(&spec);
        Self {
            spec: Arc::new(spec),
            gateway,
            prompts: Arc::new(prompts),
            cfg: Arc::new(cfg),
            label_cfg,
            out_dir: "out".into(),
        }
    }
}

pub struct Analyzed {
    pub record: Arc<ImageRecord>,
    pub analysis: ImageAnalysis,
    pub raw: Value,
    pub decision: Decision,
    pub class: String,
}

pub struct Optimized {
    pub analyzed: Analyzed,
    pub image: Image,
    pub trace: Vec<Transform>,
    pub plan: ToolPlan,
}

/// Result of one stage: the next stage's input, or a final outcome.
pub enum Step<T> {
    Next(T),
    Done(ItemOutcome),
}

fn guarded<T>(stage: Stage, f: impl FnOnce() -> Step<T>) -> Step<T> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Step::Done(ItemOutcome::fail(stage, FailureCategory::Crash, msg))
        }
    }
}

/// Seed for per-image randomness, independent of worker order.
pub fn item_seed(run_seed: u64, index: u64) -> u64 {
    let mut z = run_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// File-system-safe form of a record id.
pub fn safe_id(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
}

pub fn analyze(ctx: &ItemContext, record: Arc<ImageRecord>) -> Step<Analyzed> {
    guarded(Stage::Analyze, || {
        let spec = &ctx.spec;
        let prompt = ctx.prompts.image_analysis(&record.id, &spec.class_names());
        let raw = match ctx.gateway.multimodal.analyze_multimodal(&record, &prompt) {
            Ok(v) => v,
            Err(e) => return Step::Done(ItemOutcome::fail(Stage::Analyze, FailureCategory::of_gateway(&e), e.to_string())),
        };
        let mut analysis = match analysis::parse_analysis(&raw) {
            Ok(a) => a,
            Err(e) => {
                let category = match e {
                    AnalysisError::NotADocument => FailureCategory::MalformedBackendReply,
                    AnalysisError::SchemaViolation { .. } => FailureCategory::SchemaViolation,
                };
                return Step::Done(ItemOutcome::Fail {
                    stage: Stage::Analyze,
                    category,
                    context: e.to_string(),
                    analysis: Some(raw),
                });
            }
        };
        // the decoded frame is authoritative for size
        analysis.image_quality.resolution = record.image.dims();
        let decision = analysis::decide(&analysis, spec);
        let doc = analysis.to_value();
        if !decision.accept {
            let gate = decision.failed_gate.map(|g| gate_name(g).to_string()).unwrap_or_default();
            let class = spec.match_class(&analysis.target_category).map(|c| c.name.clone());
            return Step::Done(ItemOutcome::Reject { class, gate, reason: decision.reason, analysis: Some(doc) });
        }
        match labeling::assign_class_label(&analysis, spec) {
            Ok(class) => Step::Next(Analyzed { record: record.clone(), analysis, raw: doc, decision, class }),
            Err(e) => Step::Done(ItemOutcome::Reject {
                class: None,
                gate: "class".into(),
                reason: e.to_string(),
                analysis: Some(doc),
            }),
        }
    })
}

fn gate_name(g: analysis::Gate) -> &'static str {
    match g {
        analysis::Gate::Alignment => "alignment",
        analysis::Gate::Risk => "risk",
        analysis::Gate::Resolution => "resolution",
    }
}

fn backend_plan(ctx: &ItemContext, a: &Analyzed) -> Option<ToolPlan> {
    let prompt = ctx.prompts.tool_plan(&a.raw.to_string(), ctx.spec.target_resolution);
    let reply = ctx.gateway.text.complete_text(&prompt).ok()?;
    let plan = ToolPlan::from_json(&extract_json(&reply)?).ok()?;
    (!plan.steps.is_empty() && plan.validate(ctx.spec.target_resolution).is_empty()).then_some(plan)
}

pub fn optimize(ctx: &ItemContext, a: Analyzed) -> Step<Optimized> {
    guarded(Stage::Optimize, || {
        let mut plan = if ctx.cfg.backend_tool_plan {
            backend_plan(ctx, &a).unwrap_or_else(|| {
                log::warn!("backend tool plan for {} unusable, using rule planner", a.record.id);
                analysis::plan_tools(&a.analysis, &ctx.spec)
            })
        } else {
            analysis::plan_tools(&a.analysis, &ctx.spec)
        };
        if let Some(sigma) = ctx.cfg.noise_sigma {
            let seed = item_seed(ctx.cfg.seed, a.record.index);
            plan.push(ToolCall::Augment { spec: AugmentSpec::GaussianNoise { sigma, seed } }, "configured noise augmentation");
        }
        match apply_plan(&a.record.image, &plan) {
            Ok((image, trace)) => Step::Next(Optimized { analyzed: a, image, trace, plan }),
            Err(e) => Step::Done(ItemOutcome::fail(Stage::Optimize, FailureCategory::ToolError, e.to_string())),
        }
    })
}

pub fn label(ctx: &ItemContext, o: Optimized) -> ItemOutcome {
    match guarded(Stage::Label, || label_inner(ctx, o)) {
        Step::Done(out) => out,
        Step::Next(never) => match never {},
    }
}

enum Never {}

fn label_inner(ctx: &ItemContext, o: Optimized) -> Step<Never> {
    let spec = &ctx.spec;
    let a = &o.analyzed;
    let record = &a.record;
    let annotated = match spec.task_type {
        TaskType::Classification => Ok(AnnotationSet {
            image_id: record.id.clone(),
            class_label: Some(a.class.clone()),
            ..Default::default()
        }),
        TaskType::Detection => labeling::annotate_detection(record, spec, &ctx.gateway.grounder, &ctx.label_cfg),
        t => {
            let variant = SegVariant::for_task(t).expect("segmentation task");
            labeling::annotate_segmentation(record, spec, &ctx.gateway.segmenter, variant, &ctx.label_cfg)
        }
    };
    let set = match annotated {
        Ok(s) => s,
        Err(e) => {
            return Step::Done(ItemOutcome::Fail {
                stage: Stage::Label,
                category: FailureCategory::of_gateway(&e),
                context: e.to_string(),
                analysis: Some(a.raw.clone()),
            })
        }
    };
    let mut set = set.transformed(&o.trace);
    let empty = match spec.task_type {
        TaskType::Classification => false,
        TaskType::Detection | TaskType::InstanceSeg => set.detections.is_empty(),
        TaskType::SemanticSeg => set.semantic.as_ref().is_none_or(|m| m.distinct().iter().all(|&v| v == 0)),
        TaskType::PanopticSeg => set.panoptic.as_ref().is_none_or(|m| m.distinct().iter().all(|&v| v == 0)),
    };
    if empty && !ctx.label_cfg.keep_negatives && !set.flags.iter().any(|f| f == "unlabeled") {
        set.flags.push("unlabeled".into());
    }
    if !set.is_usable() {
        return Step::Done(ItemOutcome::Reject {
            class: Some(a.class.clone()),
            gate: "label".into(),
            reason: set.flags.join("; "),
            analysis: Some(a.raw.clone()),
        });
    }
    Step::Done(match build_accepted(ctx, &o, &set) {
        Ok(acc) => ItemOutcome::Accept(Box::new(acc)),
        Err(e) => ItemOutcome::Fail {
            stage: Stage::Label,
            category: FailureCategory::ToolError,
            context: e,
            analysis: Some(a.raw.clone()),
        },
    })
}

/// Runs every stage in order on one record.
pub fn process_item(ctx: &ItemContext, record: Arc<ImageRecord>) -> ItemOutcome {
    let a = match analyze(ctx, record) {
        Step::Next(a) => a,
        Step::Done(o) => return o,
    };
    let o = match optimize(ctx, a) {
        Step::Next(o) => o,
        Step::Done(out) => return out,
    };
    label(ctx, o)
}

/// The source frame under the plan's crops and flips, bicubic-resized to
/// the output size: the same view as the output minus photometric edits.
fn ssim_reference(original: &Image, plan: &ToolPlan, out_dims: (u32, u32)) -> Option<Image> {
    let mut geo = ToolPlan::default();
    for s in &plan.steps {
        let keep = match &s.call {
            ToolCall::Crop { .. } => true,
            ToolCall::Augment { spec } => !matches!(spec, AugmentSpec::GaussianNoise { .. }),
            _ => false,
        };
        if keep {
            geo.steps.push(s.clone());
        }
    }
    let (framed, _) = apply_plan(original, &geo).ok()?;
    if framed.dims() == out_dims {
        return Some(framed);
    }
    resize(&framed, out_dims.0, out_dims.1, Interpolation::Bicubic).ok()
}

/// Crop of the source frame, composed over every crop in the trace.
fn source_crop(trace: &[Transform]) -> Option<PixelRect> {
    let mut acc: Option<PixelRect> = None;
    let mut scale = (1.0f64, 1.0f64);
    for t in trace {
        match t {
            Transform::Crop { rect, .. } => {
                let r = PixelRect::new(
                    (rect.x as f64 * scale.0).round() as u32,
                    (rect.y as f64 * scale.1).round() as u32,
                    ((rect.width as f64 * scale.0).round() as u32).max(1),
                    ((rect.height as f64 * scale.1).round() as u32).max(1),
                );
                acc = Some(match acc {
                    Some(outer) => outer.compose(&r),
                    None => r,
                });
            }
            Transform::Resize { from, to } => {
                scale = (scale.0 * from.0 as f64 / to.0 as f64, scale.1 * from.1 as f64 / to.1 as f64);
            }
            _ => {}
        }
    }
    acc
}

fn sorted_unique(it: impl IntoIterator<Item = String>) -> Vec<String> {
    it.into_iter().collect::<BTreeSet<_>>().into_iter().collect()
}

fn pixel_box(b: &crate::geometry::NormalizedBox, w: u32, h: u32) -> [f64; 4] {
    let r6 = |v: f64| (v * 1e6).round() / 1e6;
    [r6(b.x1() * w as f64), r6(b.y1() * h as f64), r6(b.width() * w as f64), r6(b.height() * h as f64)]
}

fn build_accepted(ctx: &ItemContext, o: &Optimized, set: &AnnotationSet) -> Result<Accepted, String> {
    let spec = &ctx.spec;
    let formats = &spec.annotation_formats;
    let a = &o.analyzed;
    let record = &a.record;
    let (w, h) = o.image.dims();
    let id = safe_id(&record.id);
    let out = &ctx.out_dir;
    let class_names = spec.class_names();
    let class_of_id = |cid: u32| class_names.get(cid as usize - 1).cloned();

    let mut files = Vec::new();
    let png = o.image.encode_png().map_err(|e| e.to_string())?;
    let image_rel = match spec.task_type {
        TaskType::Classification => format!("{}/{id}.png", a.class),
        _ => format!("images/{id}.png"),
    };
    files.push((format!("{out}/{image_rel}"), png));

    let mut entry = ImageEntry {
        id: record.id.clone(),
        file: image_rel,
        class: a.class.clone(),
        source_id: record.source_id.clone(),
        origin_uri: record.origin_uri.clone(),
        crop: source_crop(&o.trace),
        ..Default::default()
    };
    let risks = &a.analysis.quality_risks;
    entry.occlusion_level = Some(risks.occlusion_level.unwrap_or(if risks.occlusion_detected { f64::MIN_POSITIVE } else { 0.0 }));
    entry.ssim = ssim_reference(&record.image, &o.plan, (w, h)).and_then(|r| ssim(&r, &o.image).ok());

    let mut coco = Vec::new();
    let mut label_map: Option<LabelMap> = None;
    match spec.task_type {
        TaskType::Classification => entry.classes_present = vec![a.class.clone()],
        TaskType::Detection => {
            for d in &set.detections {
                let bbox = pixel_box(&d.bbox, w, h);
                entry.instances.push(InstanceInfo { class: d.class.clone(), area: (bbox[2] * bbox[3]).round() as u64 });
                coco.push(CocoSeed { category: d.class.clone(), bbox, mask: None, mask_area: None, score: d.confidence });
            }
            entry.classes_present = sorted_unique(set.detections.iter().map(|d| d.class.clone()));
        }
        TaskType::InstanceSeg => {
            let mut map = LabelMap::filled(w, h, 0);
            for (n, m) in set.instances.iter().enumerate() {
                let area = m.mask.area();
                entry.instances.push(InstanceInfo { class: m.class.clone(), area });
                *entry.pixel_counts.entry(m.class.clone()).or_default() += area;
                let bbox = m.mask.normalized_bbox().map(|b| pixel_box(&b, w, h)).unwrap_or([0.0; 4]);
                coco.push(CocoSeed {
                    category: m.class.clone(),
                    bbox,
                    mask: Some(m.mask.to_rle()),
                    mask_area: Some(area),
                    score: m.confidence,
                });
                for y in 0..h {
                    for x in 0..w {
                        if m.mask.get(x, y) {
                            map.set(x, y, n as u32 + 1);
                        }
                    }
                }
                if formats.contains(&AnnotationFormat::MaskPng) {
                    let bytes = emit_instance_png(&m.mask).map_err(|e| e.to_string())?;
                    files.push((format!("{out}/masks_instance/{id}_{:03}.png", m.instance_id), bytes));
                }
            }
            entry.classes_present = sorted_unique(set.instances.iter().map(|m| m.class.clone()));
            label_map = Some(map);
        }
        TaskType::SemanticSeg => {
            let map = set.semantic.clone().ok_or("semantic map missing")?;
            for cid in map.distinct().into_iter().filter(|&v| v > 0) {
                let mask = map.mask_of(cid);
                let name = class_of_id(cid).ok_or_else(|| format!("label {cid} outside class list"))?;
                let area = mask.area();
                entry.instances.push(InstanceInfo { class: name.clone(), area });
                entry.pixel_counts.insert(name.clone(), area);
                let bbox = mask.normalized_bbox().map(|b| pixel_box(&b, w, h)).unwrap_or([0.0; 4]);
                let score = set.detections.iter().filter(|d| d.class == name).map(|d| d.confidence).fold(1.0, f64::min);
                coco.push(CocoSeed { category: name, bbox, mask: Some(mask.to_rle()), mask_area: Some(area), score });
            }
            if formats.contains(&AnnotationFormat::MaskPng) {
                files.push((format!("{out}/masks_semantic/{id}.png"), emit_semantic_png(&map).map_err(|e| e.to_string())?));
            }
            entry.classes_present = entry.pixel_counts.keys().cloned().collect();
            label_map = Some(map);
        }
        TaskType::PanopticSeg => {
            let map = set.panoptic.clone().ok_or("panoptic map missing")?;
            for seg in map.distinct().into_iter().filter(|&v| v > 0) {
                let (cid, _) = split_panoptic_id(seg);
                let name = class_of_id(cid).ok_or_else(|| format!("label {cid} outside class list"))?;
                let mask = map.mask_of(seg);
                let area = mask.area();
                entry.instances.push(InstanceInfo { class: name.clone(), area });
                *entry.pixel_counts.entry(name.clone()).or_default() += area;
                let bbox = mask.normalized_bbox().map(|b| pixel_box(&b, w, h)).unwrap_or([0.0; 4]);
                coco.push(CocoSeed { category: name, bbox, mask: Some(mask.to_rle()), mask_area: Some(area), score: 1.0 });
            }
            if formats.contains(&AnnotationFormat::MaskPng) {
                files.push((format!("{out}/masks_panoptic/{id}.png"), emit_panoptic_png(&map).map_err(|e| e.to_string())?));
            }
            entry.classes_present = entry.pixel_counts.keys().cloned().collect();
            label_map = Some(map);
        }
    }
    if let Some(map) = &label_map {
        entry.esi = match esi_for_mask(&o.image, map) {
            Ok(v) => Some(v),
            Err(MetricError::EmptyEdgeSet) => None,
            Err(e) => return Err(e.to_string()),
        };
    }
    if spec.task_type != TaskType::Classification {
        if formats.contains(&AnnotationFormat::Yolo) {
            let text = emit_yolo(&set.detections, |c| spec.class_id(c).map(|i| i as usize - 1)).map_err(|e| e.to_string())?;
            files.push((format!("{out}/labels_yolo/{id}.txt"), text.into_bytes()));
        }
        if formats.contains(&AnnotationFormat::Voc) {
            let voc = build_voc("images", &format!("{id}.png"), (w, h), o.image.channels(), &set.detections, |c| {
                spec.class_id(c).is_some()
            })
            .map_err(|e| e.to_string())?;
            files.push((format!("{out}/annotations_voc/{id}.xml"), emit_voc(&voc).into_bytes()));
        }
    }
    let record_doc = ItemRecord { index: record.index, entry, dims: (w, h), decision: a.decision.clone(), plan: o.plan.clone(), coco };
    let mut bytes = serde_json::to_vec_pretty(&record_doc).map_err(|e| e.to_string())?;
    bytes.push(b'\n');
    files.push((record_rel(record.index), bytes));
    Ok(Accepted { class: a.class.clone(), record: record_doc, files, analysis: a.raw.clone() })
}

pub fn record_rel(index: u64) -> String {
    format!("records/{index:08}.json")
}
