//! Dataset-level files written once every image is committed: COCO
//! annotations, class list, per-image metadata, the inspection manifest,
//! the metric report and the output manifest.

use std::path::Path;

use serde_json::json;
use sha2::{Digest, Sha256};

use super::dataset::{metadata_jsonl, report_inputs, scan_entries, EntrySet, METADATA_FILE};
use super::item::{ImageEntry, ItemRecord};
use super::runner::{Supervisor, OUT_DIR};
use super::PipelineError;
use crate::dataset_spec::{AnnotationFormat, TaskKind, TaskType};
use crate::labeling::coco::{emit_coco, CocoBuilder, CocoEntry};
use crate::metrics::{alr_manifest, build_report, manifest_tsv, AlrItem};
use crate::supervision::{SupervisionError, Stage};

pub const MANIFEST_FILE: &str = "manifest.tsv";

fn committed_records(ws: &Path, sup: &Supervisor) -> Result<Vec<ItemRecord>, PipelineError> {
    let mut out = Vec::new();
    for rel in sup.state.manifest.keys().filter(|k| k.starts_with("records/")) {
        let bytes = std::fs::read(ws.join(rel))?;
        let r: ItemRecord = serde_json::from_slice(&bytes)
            .map_err(|e| SupervisionError::WorkspaceCorrupt(format!("{rel}: {e}")))?;
        out.push(r);
    }
    out.sort_by_key(|r| r.index);
    Ok(out)
}

pub(super) fn finalize(sup: &mut Supervisor) -> Result<(), PipelineError> {
    let ws = sup.ws.clone();
    let spec = sup.meta.spec.clone();
    let classes = spec.class_names();
    let records = committed_records(&ws, sup)?;
    let entries: Vec<ImageEntry> = records.iter().map(|r| r.entry.clone()).collect();
    let out = ws.join(OUT_DIR);
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();

    files.push(("classes.txt".into(), format!("{}\n", classes.join("\n")).into_bytes()));
    files.push((METADATA_FILE.into(), metadata_jsonl(&entries).into_bytes()));
    if spec.task_type != TaskType::Classification && spec.annotation_formats.contains(&AnnotationFormat::Coco) {
        let mut b = CocoBuilder::new(&classes);
        for r in &records {
            let seeds: Vec<CocoEntry> = r
                .coco
                .iter()
                .map(|c| CocoEntry {
                    category: c.category.clone(),
                    bbox: c.bbox,
                    mask: c.mask.clone(),
                    mask_area: c.mask_area,
                    score: c.score,
                })
                .collect();
            b.add_image(&r.entry.file, r.dims, &seeds);
        }
        files.push(("annotations_coco.json".into(), emit_coco(&b.finish()).into_bytes()));
    }
    let items: Vec<AlrItem> = entries.iter().map(|e| AlrItem { image_id: e.id.clone(), label: e.class.clone() }).collect();
    let sample = alr_manifest(&items, sup.meta.config.alr_sample.min(items.len()), sup.meta.config.seed)?;
    files.push(("alr_manifest.tsv".into(), manifest_tsv(&sample).into_bytes()));

    let original = match (&spec.task_kind, &sup.meta.existing) {
        (TaskKind::Expand, Some(m)) => Some(scan_entries(&m.root)?),
        _ => None,
    };
    let mut sets = Vec::new();
    if let Some((m, e)) = &original {
        sets.push(EntrySet { root: m.root.as_path(), entries: e.as_slice() });
    }
    sets.push(EntrySet { root: out.as_path(), entries: &entries });
    let mut inputs = report_inputs(&spec.name, spec.task_type, &classes, &sets, original.as_ref().map(|(_, e)| e.as_slice()));
    inputs.meta.insert("run_id".into(), sup.meta.run_id.clone());
    inputs.meta.insert("seed".into(), sup.meta.config.seed.to_string());
    if let Some(m) = &sup.meta.existing {
        inputs.meta.insert("original_images".into(), m.image_count.to_string());
        for (i, c) in m.conflicts.iter().enumerate() {
            inputs.meta.insert(format!("conflict.{i}"), c.to_string());
        }
    }
    let report = build_report(&inputs);
    let mut json_bytes = serde_json::to_vec_pretty(&report.to_json()).expect("report serializes");
    json_bytes.push(b'\n');
    files.push(("report.json".into(), json_bytes));
    files.push(("report.txt".into(), report.to_table().into_bytes()));

    // manifest of every output file, this one excluded
    let mut lines: Vec<(String, String)> = sup
        .state
        .manifest
        .iter()
        .filter_map(|(rel, sha)| rel.strip_prefix(&format!("{OUT_DIR}/")).map(|r| (r.to_string(), sha.clone())))
        .collect();
    lines.extend(files.iter().map(|(rel, bytes)| (rel.clone(), hex::encode(Sha256::digest(bytes)))));
    lines.sort();
    lines.dedup();
    let manifest: String = lines.iter().map(|(r, s)| format!("{r}\t{s}\n")).collect();
    files.push((MANIFEST_FILE.into(), manifest.into_bytes()));

    let files: Vec<(String, Vec<u8>)> = files.into_iter().map(|(r, b)| (format!("{OUT_DIR}/{r}"), b)).collect();
    let staged = sup.stage_files("finalize", &files)?;
    sup.install_logged("finalize_commit", staged, json!({"images": entries.len()}))?;
    sup.checkpoint(Stage::Finalize)
}
