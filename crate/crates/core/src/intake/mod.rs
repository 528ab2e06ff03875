//! Demand intake: turns a natural-language request into a validated
//! [`DatasetSpec`], asks for whatever is missing, and aligns Expand requests
//! with the dataset they grow.

pub(crate) mod layout;

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde_json::{Map, Value};
use thiserror::Error;

pub use layout::{detect_layout, inspect_dataset, resolve_expand_target, ExistingDatasetMeta, SizeStats};

use crate::acquisition::SourceDescriptor;
use crate::analysis::extract_json;
use crate::dataset_spec::{
    validate_spec, AnnotationFormat, ClassDef, DataSources, DatasetSpec, QualityConstraints, TaskKind, TaskType,
};
use crate::gateway::{GatewayError, TextModelHandle};
use crate::prompts::PromptSet;
use crate::violation::Violation;

#[derive(Debug, Error)]
pub enum IntakeError {
    #[error("demand is empty")]
    EmptyDemand,
    #[error("text backend failed: {0}")]
    BackendUnavailable(#[from] GatewayError),
    #[error("extraction reply invalid after repair: {}", join(.violations))]
    MalformedBackendReply { violations: Vec<Violation>, reply: String },
    #[error("demand is not about building or expanding an image dataset")]
    IrrelevantDemand,
    #[error("spec is not an Expand request")]
    NotExpand,
    #[error("dataset root {0} does not exist")]
    RootMissing(PathBuf),
    #[error("no known dataset layout under {0}")]
    UnrecognizedLayout(PathBuf),
    #[error("dataset under {0} has no images")]
    EmptyDataset(PathBuf),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// Fields the user must supply before a spec can be built.
#[derive(Debug, Clone, PartialEq)]
pub struct ClarificationRequest {
    pub missing: Vec<String>,
    /// Supplied values that break a spec invariant.
    pub invalid: Vec<Violation>,
}

impl ClarificationRequest {
    /// One question per missing field, then one per invalid value.
    pub fn questions(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self.missing.iter().map(|f| (f.clone(), question_for(f).to_string())).collect();
        for v in &self.invalid {
            out.push((answer_key(&v.field).to_string(), format!("{} is invalid ({v}); please restate it", v.field)));
        }
        out
    }
}

fn question_for(field: &str) -> &'static str {
    match field {
        "classes" => "Which classes should the dataset contain? (comma-separated)",
        "task_type" => "Which task is the dataset for? (classification, detection, semantic_seg, instance_seg, panoptic_seg)",
        "per_class_target" => "How many images per class?",
        "existing_root" => "Where is the existing dataset to expand? (directory path)",
        _ => "Please provide a value.",
    }
}

fn answer_key(field: &str) -> &str {
    match field {
        "source" => "existing_root",
        f if f.starts_with("classes") => "classes",
        f => f,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntakeOutcome {
    Spec(DatasetSpec),
    Clarify(ClarificationRequest),
}

/// Everything besides the demand text that shapes the spec.
#[derive(Debug, Clone, Default)]
pub struct IntakeContext {
    /// Answers to earlier clarification questions, keyed by field name.
    pub answers: Vec<(String, String)>,
    /// Reference documents attached to the request.
    pub context_docs: Vec<String>,
    pub existing_root: Option<PathBuf>,
    pub corpus: Option<SourceDescriptor>,
    pub quality: QualityConstraints,
}

/// The validated content of a backend extraction reply.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Extraction {
    pub relevant: bool,
    pub task_kind: Option<TaskKind>,
    pub task_type: Option<TaskType>,
    pub dataset_name: Option<String>,
    pub classes: Vec<ClassDef>,
    pub per_class_target: Option<u64>,
    pub target_resolution: Option<(u32, u32)>,
    pub annotation_formats: BTreeSet<AnnotationFormat>,
}

/// Validates an extraction document against the published schema.
pub fn validate_extraction(doc: &Value) -> Result<Extraction, Vec<Violation>> {
    let Some(map) = doc.as_object() else {
        return Err(vec![Violation::new("$", "type").with_detail("expected an object")]);
    };
    let mut v = Vec::new();
    let mut out = Extraction::default();
    match map.get("relevant") {
        Some(Value::Bool(b)) => out.relevant = *b,
        Some(_) => v.push(Violation::new("relevant", "type")),
        None => v.push(Violation::new("relevant", "required")),
    }
    if !out.relevant && v.is_empty() {
        return Ok(out);
    }
    let text = |key: &str, v: &mut Vec<Violation>| -> Option<String> {
        match map.get(key) {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
            Some(Value::String(_)) => None,
            Some(_) => {
                v.push(Violation::new(key, "type"));
                None
            }
        }
    };
    if let Some(s) = text("task_kind", &mut v) {
        out.task_kind = TaskKind::parse_loose(&s);
        if out.task_kind.is_none() {
            v.push(Violation::new("task_kind", "enum").with_detail(s));
        }
    }
    if let Some(s) = text("task_type", &mut v) {
        out.task_type = TaskType::parse_loose(&s);
        if out.task_type.is_none() {
            v.push(Violation::new("task_type", "enum").with_detail(s));
        }
    }
    out.dataset_name = text("dataset_name", &mut v);
    match map.get("classes") {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                match parse_class(item) {
                    Some(c) => out.classes.push(c),
                    None => v.push(Violation::new(format!("classes[{i}]"), "type")),
                }
            }
        }
        Some(_) => v.push(Violation::new("classes", "type")),
    }
    match map.get("per_class_target") {
        None | Some(Value::Null) => {}
        Some(n) => match n.as_u64() {
            Some(n) if n >= 1 => out.per_class_target = Some(n),
            _ => v.push(Violation::new("per_class_target", "min").with_detail("positive integer")),
        },
    }
    match map.get("target_resolution") {
        None | Some(Value::Null) => {}
        Some(Value::Array(a)) if a.len() == 2 => match (a[0].as_u64(), a[1].as_u64()) {
            (Some(w), Some(h)) if w > 0 && h > 0 => out.target_resolution = Some((w as u32, h as u32)),
            _ => v.push(Violation::new("target_resolution", "positive")),
        },
        Some(_) => v.push(Violation::new("target_resolution", "type").with_detail("expected [width, height]")),
    }
    match map.get("annotation_formats") {
        None | Some(Value::Null) => {}
        Some(Value::Array(a)) => {
            for (i, f) in a.iter().enumerate() {
                match f.as_str().and_then(AnnotationFormat::parse_loose) {
                    Some(f) => {
                        out.annotation_formats.insert(f);
                    }
                    None => v.push(Violation::new(format!("annotation_formats[{i}]"), "enum")),
                }
            }
        }
        Some(_) => v.push(Violation::new("annotation_formats", "type")),
    }
    if v.is_empty() {
        Ok(out)
    } else {
        Err(v)
    }
}

fn parse_class(item: &Value) -> Option<ClassDef> {
    match item {
        Value::String(s) if !s.trim().is_empty() => Some(ClassDef::new(s.trim(), 0)),
        Value::Object(m) => {
            let name = m.get("name")?.as_str()?.trim();
            if name.is_empty() {
                return None;
            }
            let synonyms = match m.get("synonyms") {
                None | Some(Value::Null) => Vec::new(),
                Some(Value::Array(a)) => a.iter().map(|s| s.as_str().map(str::to_string)).collect::<Option<Vec<_>>>()?,
                Some(_) => return None,
            };
            Some(ClassDef { name: name.to_string(), target_count: 0, synonyms })
        }
        _ => None,
    }
}

fn read_reply(reply: &str) -> Result<Extraction, Vec<Violation>> {
    let doc = serde_json::from_str::<Value>(reply.trim())
        .ok()
        .or_else(|| extract_json(reply))
        .ok_or_else(|| vec![Violation::new("$", "json").with_detail("reply is not a JSON object")])?;
    validate_extraction(&doc)
}

/// Asks the backend for a structured extraction, allowing one repair round.
pub fn extract(
    demand: &str,
    backend: &TextModelHandle,
    prompts: &PromptSet,
    ctx: &IntakeContext,
) -> Result<Extraction, IntakeError> {
    let reply = backend.complete_text(&prompts.demand_extraction(demand, &ctx.answers, &ctx.context_docs))?;
    match read_reply(&reply) {
        Ok(x) => Ok(x),
        Err(violations) => {
            log::warn!("extraction reply failed validation: {}", join(&violations));
            let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            let repaired = backend.complete_text(&prompts.schema_repair(demand, &ctx.answers, &reply, &lines))?;
            read_reply(&repaired).map_err(|violations| IntakeError::MalformedBackendReply { violations, reply: repaired })
        }
    }
}

/// Parses a demand into a spec, or lists what the user still has to supply.
pub fn parse_demand(
    raw: &str,
    backend: &TextModelHandle,
    prompts: &PromptSet,
    ctx: &IntakeContext,
) -> Result<IntakeOutcome, IntakeError> {
    if raw.trim().is_empty() {
        return Err(IntakeError::EmptyDemand);
    }
    let mut x = extract(raw, backend, prompts, ctx)?;
    if !x.relevant {
        return Err(IntakeError::IrrelevantDemand);
    }
    let mut existing_root = ctx.existing_root.clone();
    let mut name = x.dataset_name.take();
    let mut invalid = Vec::new();
    apply_answers(&mut x, &mut existing_root, &mut name, &ctx.answers, &mut invalid);

    let task_kind = x.task_kind.unwrap_or(TaskKind::Build);
    if task_kind == TaskKind::Expand && x.classes.is_empty() {
        if let Some(meta) = existing_root.as_deref().and_then(|r| inspect_dataset(r).ok()) {
            x.classes = meta.class_names.iter().map(|c| ClassDef::new(c.clone(), 0)).collect();
            x.task_type = x.task_type.or(Some(meta.task_type));
        }
    }
    let mut missing = Vec::new();
    if x.task_type.is_none() {
        missing.push("task_type".to_string());
    }
    if x.classes.is_empty() {
        missing.push("classes".to_string());
    }
    if x.per_class_target.is_none() {
        missing.push("per_class_target".to_string());
    }
    if task_kind == TaskKind::Expand && existing_root.is_none() {
        missing.push("existing_root".to_string());
    }
    if !missing.is_empty() || !invalid.is_empty() {
        return Ok(IntakeOutcome::Clarify(ClarificationRequest { missing, invalid }));
    }

    let task_type = x.task_type.expect("checked");
    let per_class = x.per_class_target.expect("checked");
    let name = name
        .or_else(|| existing_root.as_ref().and_then(|r| r.file_name()).map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "dataset".to_string());
    let mut formats = x.annotation_formats.clone();
    if formats.is_empty() {
        formats = task_type.default_formats();
    }
    if task_type.is_segmentation() {
        formats.insert(AnnotationFormat::MaskPng);
    }
    let spec = DatasetSpec {
        name,
        task_kind,
        task_type,
        classes: x.classes.iter().map(|c| ClassDef { target_count: per_class, ..c.clone() }).collect(),
        target_resolution: x.target_resolution,
        annotation_formats: formats,
        per_class_target: per_class,
        source: DataSources { corpus: ctx.corpus.clone(), existing_root },
        quality_constraints: ctx.quality.clone(),
        context_docs: ctx.context_docs.clone(),
    };
    let violations = validate_spec(&spec);
    if violations.is_empty() {
        Ok(IntakeOutcome::Spec(spec))
    } else {
        Ok(IntakeOutcome::Clarify(ClarificationRequest { missing: Vec::new(), invalid: violations }))
    }
}

/// Answers override the extraction field by field.
fn apply_answers(
    x: &mut Extraction,
    root: &mut Option<PathBuf>,
    name: &mut Option<String>,
    answers: &[(String, String)],
    invalid: &mut Vec<Violation>,
) {
    for (key, value) in answers {
        let value = value.trim();
        match key.as_str() {
            "classes" => {
                x.classes = value
                    .split([',', ';', '\n'])
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| ClassDef::new(s, 0))
                    .collect();
            }
            "task_type" => match TaskType::parse_loose(value) {
                Some(t) => x.task_type = Some(t),
                None => invalid.push(Violation::new("task_type", "enum").with_detail(value)),
            },
            "task_kind" => match TaskKind::parse_loose(value) {
                Some(k) => x.task_kind = Some(k),
                None => invalid.push(Violation::new("task_kind", "enum").with_detail(value)),
            },
            "per_class_target" => match value.replace([',', '_'], "").parse::<u64>() {
                Ok(n) if n >= 1 => x.per_class_target = Some(n),
                _ => invalid.push(Violation::new("per_class_target", "min").with_detail(value)),
            },
            "target_resolution" => match parse_resolution(value) {
                Some(r) => x.target_resolution = Some(r),
                None => invalid.push(Violation::new("target_resolution", "format").with_detail(value)),
            },
            "annotation_formats" => {
                let parsed: Option<BTreeSet<_>> =
                    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(AnnotationFormat::parse_loose).collect();
                match parsed {
                    Some(f) => x.annotation_formats = f,
                    None => invalid.push(Violation::new("annotation_formats", "enum").with_detail(value)),
                }
            }
            "existing_root" => *root = Some(PathBuf::from(value)),
            "name" | "dataset_name" => *name = Some(value.to_string()),
            other => log::debug!("ignoring answer for unknown field {other:?}"),
        }
    }
}

fn parse_resolution(s: &str) -> Option<(u32, u32)> {
    let (w, h) = s.split_once(['x', 'X', '×'])?;
    let (w, h) = (w.trim().parse().ok()?, h.trim().parse().ok()?);
    (w > 0 && h > 0).then_some((w, h))
}

/// The extraction document a compliant backend would return for `spec`.
pub fn extraction_document(spec: &DatasetSpec) -> Value {
    let mut m = Map::new();
    m.insert("relevant".into(), Value::Bool(true));
    m.insert("task_kind".into(), serde_json::to_value(spec.task_kind).expect("enum"));
    m.insert("task_type".into(), serde_json::to_value(spec.task_type).expect("enum"));
    m.insert("dataset_name".into(), Value::String(spec.name.clone()));
    m.insert(
        "classes".into(),
        Value::Array(
            spec.classes
                .iter()
                .map(|c| serde_json::json!({"name": c.name, "synonyms": c.synonyms}))
                .collect(),
        ),
    );
    m.insert("per_class_target".into(), spec.per_class_target.into());
    m.insert(
        "target_resolution".into(),
        spec.target_resolution.map(|(w, h)| serde_json::json!([w, h])).unwrap_or(Value::Null),
    );
    m.insert("annotation_formats".into(), serde_json::to_value(&spec.annotation_formats).expect("enum set"));
    Value::Object(m)
}
