//! Per-image entries for any dataset tree, and the report inputs built
//! from them. Trees written by this crate carry `metadata.jsonl`; foreign
//! trees are scanned through their annotation files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use super::item::{ImageEntry, InstanceInfo};
use super::PipelineError;
use crate::dataset_spec::{AnnotationFormat, TaskType};
use crate::image::{probe_dimensions, Image};
use crate::intake::layout::{
    class_dirs, coco_file, first_dir, images_in, with_ext, IMAGE_DIRS, MASK_DIRS, VOC_DIRS, YOLO_DIRS,
};
use crate::intake::{inspect_dataset, ExistingDatasetMeta};
use crate::labeling::coco::parse_coco;
use crate::labeling::masks::{decode_instance_png, decode_panoptic_png, decode_semantic_png, split_panoptic_id};
use crate::labeling::voc::parse_voc;
use crate::labeling::yolo::parse_yolo;
use crate::metrics::{alr_ingest, build_report, esi_for_mask, histogram_features, AlrItem, MetricReport, ReportInputs, Verdicts};
use crate::raster::LabelMap;

pub const METADATA_FILE: &str = "metadata.jsonl";
/// Source id given to images that were already in a dataset.
pub const EXISTING_SOURCE: &str = "existing";

pub fn read_metadata(path: &Path) -> Result<Vec<ImageEntry>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| PipelineError::Config(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn metadata_jsonl(entries: &[ImageEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e).expect("entry serializes"));
        s.push('\n');
    }
    s
}

/// Layout facts plus one entry per image.
pub fn scan_entries(root: &Path) -> Result<(ExistingDatasetMeta, Vec<ImageEntry>), PipelineError> {
    let meta = inspect_dataset(root)?;
    let md = root.join(METADATA_FILE);
    if md.is_file() {
        return Ok((meta, read_metadata(&md)?));
    }
    let entries = match meta.layout {
        AnnotationFormat::ClassDirs => scan_class_dirs(root),
        AnnotationFormat::Voc => scan_voc(root),
        AnnotationFormat::Coco => scan_coco(root),
        AnnotationFormat::Yolo => scan_yolo(root, &meta.class_names),
        AnnotationFormat::MaskPng => scan_masks(root, meta.task_type, &meta.class_names),
    };
    Ok((meta, entries))
}

fn rel(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn base_entry(root: &Path, image: &Path) -> ImageEntry {
    ImageEntry {
        id: stem(image),
        file: rel(root, image),
        source_id: EXISTING_SOURCE.into(),
        origin_uri: image.display().to_string(),
        ..Default::default()
    }
}

/// The most frequent class among instances, ties to the first name.
fn dominant(instances: &[InstanceInfo]) -> String {
    let mut n: BTreeMap<&str, usize> = BTreeMap::new();
    for i in instances {
        *n.entry(&i.class).or_default() += 1;
    }
    n.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(k, _)| k.to_string()).unwrap_or_default()
}

fn finish(mut e: ImageEntry) -> ImageEntry {
    if e.class.is_empty() {
        e.class = dominant(&e.instances);
    }
    if e.classes_present.is_empty() {
        e.classes_present = e.instances.iter().map(|i| i.class.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    }
    e
}

fn image_for(root: &Path, name_or_stem: &str) -> Option<PathBuf> {
    let dir = first_dir(root, IMAGE_DIRS).unwrap_or_else(|| root.to_path_buf());
    let direct = dir.join(name_or_stem);
    if direct.is_file() {
        return Some(direct);
    }
    let s = Path::new(name_or_stem).file_stem()?.to_str()?.to_string();
    images_in(&dir).into_iter().find(|p| stem(p) == s)
}

fn scan_class_dirs(root: &Path) -> Vec<ImageEntry> {
    let mut out = Vec::new();
    for d in class_dirs(root) {
        let class = d.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        for img in images_in(&d) {
            let mut e = base_entry(root, &img);
            e.id = format!("{class}__{}", e.id);
            e.class = class.clone();
            e.classes_present = vec![class.clone()];
            out.push(e);
        }
    }
    out
}

fn scan_voc(root: &Path) -> Vec<ImageEntry> {
    let Some(dir) = first_dir(root, VOC_DIRS) else { return vec![] };
    let mut out = Vec::new();
    for xml in with_ext(&dir, "xml") {
        let Ok(a) = std::fs::read_to_string(&xml).map_err(|e| e.to_string()).and_then(|t| parse_voc(&t)) else {
            continue;
        };
        let Some(img) = image_for(root, &a.filename).or_else(|| image_for(root, &stem(&xml))) else { continue };
        let mut e = base_entry(root, &img);
        e.instances = a
            .objects
            .iter()
            .map(|o| InstanceInfo {
                class: o.name.clone(),
                area: (o.xmax.saturating_sub(o.xmin) as u64 + 1) * (o.ymax.saturating_sub(o.ymin) as u64 + 1),
            })
            .collect();
        out.push(finish(e));
    }
    out
}

fn scan_coco(root: &Path) -> Vec<ImageEntry> {
    let Some(path) = coco_file(root) else { return vec![] };
    let Ok(doc) = std::fs::read_to_string(&path).map_err(|e| e.to_string()).and_then(|t| parse_coco(&t)) else {
        return vec![];
    };
    let names: BTreeMap<u64, String> = doc.categories.iter().map(|c| (c.id, c.name.clone())).collect();
    let mut out = Vec::new();
    for im in &doc.images {
        let file = [root.join(&im.file_name), root.join("images").join(&im.file_name)].into_iter().find(|p| p.is_file());
        let mut e = match &file {
            Some(p) => base_entry(root, p),
            None => ImageEntry { id: stem(Path::new(&im.file_name)), file: im.file_name.clone(), source_id: EXISTING_SOURCE.into(), ..Default::default() },
        };
        for a in doc.annotations.iter().filter(|a| a.image_id == im.id) {
            if let Some(n) = names.get(&a.category_id) {
                e.instances.push(InstanceInfo { class: n.clone(), area: a.area.round() as u64 });
                if a.segmentation.is_some() {
                    *e.pixel_counts.entry(n.clone()).or_default() += a.area.round() as u64;
                }
            }
        }
        out.push(finish(e));
    }
    out
}

fn scan_yolo(root: &Path, names: &[String]) -> Vec<ImageEntry> {
    let Some(dir) = first_dir(root, YOLO_DIRS) else { return vec![] };
    let mut out = Vec::new();
    for txt in with_ext(&dir, "txt") {
        let Some(img) = image_for(root, &stem(&txt)) else { continue };
        let Ok(lines) = std::fs::read_to_string(&txt).map_err(|e| (0, e.to_string())).and_then(|t| parse_yolo(&t)) else {
            continue;
        };
        let Ok((w, h)) = probe_dimensions(&img) else { continue };
        let mut e = base_entry(root, &img);
        e.instances = lines
            .iter()
            .map(|l| InstanceInfo {
                class: names.get(l.class_idx).cloned().unwrap_or_else(|| format!("class{}", l.class_idx)),
                area: (l.w * w as f64 * l.h * h as f64).round() as u64,
            })
            .collect();
        out.push(finish(e));
    }
    out
}

fn class_name(names: &[String], id: u32) -> String {
    names.get(id as usize - 1).cloned().unwrap_or_else(|| format!("class{id}"))
}

fn with_map(root: &Path, mut e: ImageEntry, map: &LabelMap, names: &[String], panoptic: bool) -> ImageEntry {
    for v in map.distinct().into_iter().filter(|&v| v > 0) {
        let cid = if panoptic { split_panoptic_id(v).0 } else { v };
        let n = class_name(names, cid);
        let area = map.mask_of(v).area();
        e.instances.push(InstanceInfo { class: n.clone(), area });
        *e.pixel_counts.entry(n).or_default() += area;
    }
    if let Some(img) = image_for(root, &e.id) {
        e.file = rel(root, &img);
        e.origin_uri = img.display().to_string();
        if let Ok(im) = Image::open(&img) {
            e.esi = esi_for_mask(&im, map).ok();
        }
    }
    finish(e)
}

fn scan_masks(root: &Path, task: TaskType, names: &[String]) -> Vec<ImageEntry> {
    let Some(dir) = first_dir(root, MASK_DIRS) else { return vec![] };
    let mut out = Vec::new();
    match task {
        TaskType::InstanceSeg => {
            // one file per instance: <image>_<instance>.png
            let mut by_image: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
            for p in with_ext(&dir, "png") {
                let s = stem(&p);
                let key = s.rsplit_once('_').map(|(a, _)| a.to_string()).unwrap_or(s);
                by_image.entry(key).or_default().push(p);
            }
            for (id, files) in by_image {
                let mut map: Option<LabelMap> = None;
                for (n, f) in files.iter().enumerate() {
                    let Ok(m) = std::fs::read(f).map_err(|e| e.to_string()).and_then(|b| decode_instance_png(&b).map_err(|e| e.to_string())) else {
                        continue;
                    };
                    let lm = map.get_or_insert_with(|| LabelMap::filled(m.width(), m.height(), 0));
                    for y in 0..m.height() {
                        for x in 0..m.width() {
                            if m.get(x, y) {
                                lm.set(x, y, n as u32 + 1);
                            }
                        }
                    }
                }
                let Some(map) = map else { continue };
                let e = ImageEntry { id: id.clone(), source_id: EXISTING_SOURCE.into(), ..Default::default() };
                // instance PNGs carry no class; every instance counts as "object"
                let mut e = with_map(root, e, &map, &[], false);
                for i in &mut e.instances {
                    i.class = "object".into();
                }
                e.pixel_counts = BTreeMap::from([("object".to_string(), e.instances.iter().map(|i| i.area).sum())]);
                e.class = "object".into();
                e.classes_present = vec!["object".into()];
                out.push(e);
            }
        }
        _ => {
            let panoptic = task == TaskType::PanopticSeg;
            for p in with_ext(&dir, "png") {
                let Ok(bytes) = std::fs::read(&p) else { continue };
                let map = if panoptic { decode_panoptic_png(&bytes) } else { decode_semantic_png(&bytes) };
                let Ok(map) = map else { continue };
                let e = ImageEntry { id: stem(&p), source_id: EXISTING_SOURCE.into(), ..Default::default() };
                out.push(with_map(root, e, &map, names, panoptic));
            }
        }
    }
    out
}

/// A group of entries whose `file` paths are relative to `root`.
pub struct EntrySet<'a> {
    pub root: &'a Path,
    pub entries: &'a [ImageEntry],
}

/// Images per class for classification, instances per class otherwise.
pub fn class_counts(task: TaskType, entries: &[ImageEntry], classes: &[String]) -> BTreeMap<String, u64> {
    let mut out: BTreeMap<String, u64> = classes.iter().map(|c| (c.clone(), 0)).collect();
    for e in entries {
        if task == TaskType::Classification {
            *out.entry(e.class.clone()).or_default() += 1;
        } else {
            for i in &e.instances {
                *out.entry(i.class.clone()).or_default() += 1;
            }
        }
    }
    out
}

/// Report inputs over every image in `sets`. `reference` holds the entries
/// of the dataset before expansion.
pub fn report_inputs(
    dataset: &str,
    task: TaskType,
    classes: &[String],
    sets: &[EntrySet<'_>],
    reference: Option<&[ImageEntry]>,
) -> ReportInputs {
    let all: Vec<&ImageEntry> = sets.iter().flat_map(|s| s.entries.iter()).collect();
    let owned: Vec<ImageEntry> = all.iter().map(|e| (*e).clone()).collect();
    let mut inputs = ReportInputs {
        dataset: dataset.to_string(),
        task_type: Some(task),
        class_counts: class_counts(task, &owned, classes),
        reference_counts: reference.map(|r| class_counts(task, r, classes)),
        ..Default::default()
    };
    for s in sets {
        for e in s.entries {
            *inputs.source_counts.entry(e.source_id.clone()).or_default() += 1;
            inputs.ssim_values.extend(e.ssim);
            inputs.occlusion_levels.extend(e.occlusion_level);
            inputs.esi_values.extend(e.esi);
            inputs.instance_areas.extend(e.instances.iter().map(|i| i.area));
            for (c, n) in &e.pixel_counts {
                *inputs.pixel_counts.entry(c.clone()).or_default() += n;
            }
            match Image::open(&s.root.join(&e.file)) {
                Ok(im) => inputs.class_features.entry(e.class.clone()).or_default().push(histogram_features(&im)),
                Err(err) => log::warn!("no features for {}: {err}", e.file),
            }
        }
    }
    inputs.meta.insert("images".into(), all.len().to_string());
    inputs
}

/// Metric report for any recognizable dataset tree. Inspector verdicts,
/// when given, supply ALR and the IoU list for BQI.
pub fn dataset_report(root: &Path, task: Option<TaskType>, verdicts: Option<&Verdicts>) -> Result<MetricReport, PipelineError> {
    let (meta, entries) = scan_entries(root)?;
    let task = task.unwrap_or(meta.task_type);
    let name = std::fs::read_to_string(root.join("report.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v["dataset"].as_str().map(str::to_string))
        .unwrap_or_else(|| root.file_name().and_then(|n| n.to_str()).unwrap_or("dataset").to_string());
    let mut inputs = report_inputs(&name, task, &meta.class_names, &[EntrySet { root, entries: &entries }], None);
    if let Some(v) = verdicts {
        let items: Vec<AlrItem> = entries.iter().map(|e| AlrItem { image_id: e.id.clone(), label: e.class.clone() }).collect();
        if !v.correct.is_empty() {
            inputs.alr = Some(alr_ingest(&items, v)?);
        }
        if !v.ious.is_empty() {
            inputs.ious = Some(v.ious.values().copied().collect());
        }
    }
    Ok(build_report(&inputs))
}
