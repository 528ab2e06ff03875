//! Existing-dataset inspection for Expand requests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IntakeError;
use crate::dataset_spec::{AnnotationFormat, ClassDef, DatasetSpec, TaskKind, TaskType};
use crate::image::{is_supported_image, probe_dimensions};
use crate::labeling::{coco::parse_coco, masks::decode_semantic_png, voc::parse_voc, yolo::parse_yolo};
use crate::violation::Violation;

/// Directory names that mark an annotated layout rather than a class folder.
pub(crate) const RESERVED: &[&str] = &[
    "images",
    "JPEGImages",
    "Annotations",
    "annotations",
    "annotations_voc",
    "labels",
    "labels_yolo",
    "masks",
    "masks_semantic",
    "masks_instance",
    "masks_panoptic",
    "SegmentationClass",
    "SegmentationObject",
    "ImageSets",
];

pub(crate) const VOC_DIRS: &[&str] = &["Annotations", "annotations_voc"];
pub(crate) const YOLO_DIRS: &[&str] = &["labels", "labels_yolo"];
pub(crate) const MASK_DIRS: &[&str] = &["masks_semantic", "SegmentationClass", "masks", "masks_panoptic", "masks_instance"];
pub(crate) const IMAGE_DIRS: &[&str] = &["images", "JPEGImages"];
pub(crate) const CLASS_FILES: &[&str] = &["classes.txt", "obj.names"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeStats {
    pub count: u64,
    pub min: (u32, u32),
    pub max: (u32, u32),
}

impl SizeStats {
    fn from_sizes(sizes: &[(u32, u32)]) -> Option<Self> {
        let first = *sizes.first()?;
        let (mut min, mut max) = (first, first);
        for &(w, h) in sizes {
            min = (min.0.min(w), min.1.min(h));
            max = (max.0.max(w), max.1.max(h));
        }
        Some(Self { count: sizes.len() as u64, min, max })
    }

    /// The common size when every image has the same dimensions.
    pub fn uniform(&self) -> Option<(u32, u32)> {
        (self.min == self.max).then_some(self.min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistingDatasetMeta {
    pub root: PathBuf,
    pub layout: AnnotationFormat,
    pub task_type: TaskType,
    pub class_names: Vec<String>,
    pub sizes: SizeStats,
    pub image_count: u64,
    /// Images per class (images containing the class for annotated layouts).
    pub per_class_counts: BTreeMap<String, u64>,
    /// Disagreements between the demand and this dataset; the dataset wins.
    pub conflicts: Vec<Violation>,
}

pub(crate) fn dir_files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    out.retain(|p| !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')));
    out.sort();
    out
}

pub(crate) fn with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    dir_files(dir)
        .into_iter()
        .filter(|p| p.is_file() && p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case(ext)))
        .collect()
}

pub(crate) fn images_in(dir: &Path) -> Vec<PathBuf> {
    dir_files(dir).into_iter().filter(|p| p.is_file() && is_supported_image(p)).collect()
}

pub(crate) fn first_dir(root: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| root.join(n)).find(|p| p.is_dir())
}

pub(crate) fn class_dirs(root: &Path) -> Vec<PathBuf> {
    dir_files(root)
        .into_iter()
        .filter(|p| p.is_dir())
        .filter(|p| !RESERVED.contains(&p.file_name().and_then(|n| n.to_str()).unwrap_or("")))
        .filter(|p| !images_in(p).is_empty())
        .collect()
}

fn has_reserved(root: &Path) -> bool {
    RESERVED.iter().any(|n| root.join(n).is_dir())
}

pub(crate) fn coco_file(root: &Path) -> Option<PathBuf> {
    let mut candidates = vec![root.join("annotations_coco.json")];
    candidates.extend(with_ext(&root.join("annotations"), "json"));
    candidates.extend(with_ext(root, "json"));
    candidates.into_iter().find(|p| {
        p.is_file()
            && std::fs::read_to_string(p)
                .ok()
                .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
                .is_some_and(|v| v.get("images").is_some_and(|i| i.is_array()) && v.get("categories").is_some_and(|c| c.is_array()))
    })
}

/// First matching layout in the order class dirs, VOC, COCO, YOLO, mask PNG.
pub fn detect_layout(root: &Path) -> Option<AnnotationFormat> {
    if !has_reserved(root) && !class_dirs(root).is_empty() {
        return Some(AnnotationFormat::ClassDirs);
    }
    if first_dir(root, VOC_DIRS).is_some_and(|d| !with_ext(&d, "xml").is_empty()) {
        return Some(AnnotationFormat::Voc);
    }
    if coco_file(root).is_some() {
        return Some(AnnotationFormat::Coco);
    }
    if first_dir(root, YOLO_DIRS).is_some_and(|d| !with_ext(&d, "txt").is_empty()) {
        return Some(AnnotationFormat::Yolo);
    }
    if first_dir(root, MASK_DIRS).is_some_and(|d| !with_ext(&d, "png").is_empty()) {
        return Some(AnnotationFormat::MaskPng);
    }
    None
}

fn any_image(root: &Path) -> bool {
    dir_files(root).iter().any(|p| if p.is_dir() { any_image(p) } else { is_supported_image(p) })
}

pub(crate) fn class_file(root: &Path) -> Option<Vec<String>> {
    let p = CLASS_FILES.iter().map(|n| root.join(n)).find(|p| p.is_file())?;
    let text = std::fs::read_to_string(p).ok()?;
    Some(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn probe_all(paths: &[PathBuf]) -> Vec<(u32, u32)> {
    paths.iter().filter_map(|p| probe_dimensions(p).ok()).collect()
}

struct Scan {
    task_type: TaskType,
    class_names: Vec<String>,
    sizes: Vec<(u32, u32)>,
    per_class: BTreeMap<String, u64>,
}

fn scan_class_dirs(root: &Path) -> Scan {
    let mut per_class = BTreeMap::new();
    let mut sizes = Vec::new();
    let mut names = Vec::new();
    for d in class_dirs(root) {
        let name = d.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let imgs = images_in(&d);
        sizes.extend(probe_all(&imgs));
        per_class.insert(name.clone(), imgs.len() as u64);
        names.push(name);
    }
    Scan { task_type: TaskType::Classification, class_names: names, sizes, per_class }
}

fn scan_voc(root: &Path) -> Scan {
    let dir = first_dir(root, VOC_DIRS).expect("detected");
    let mut per_class: BTreeMap<String, u64> = BTreeMap::new();
    let mut sizes = Vec::new();
    let mut seen = BTreeSet::new();
    for xml in with_ext(&dir, "xml") {
        let Ok(a) = std::fs::read_to_string(&xml).map_err(|e| e.to_string()).and_then(|t| parse_voc(&t)) else {
            log::warn!("unparseable VOC file {}", xml.display());
            continue;
        };
        sizes.push((a.width, a.height));
        let names: BTreeSet<String> = a.objects.iter().map(|o| o.name.clone()).collect();
        for n in names {
            *per_class.entry(n.clone()).or_default() += 1;
            seen.insert(n);
        }
    }
    let class_names = class_file(root).unwrap_or_else(|| seen.into_iter().collect());
    Scan { task_type: TaskType::Detection, class_names, sizes, per_class }
}

fn scan_coco(root: &Path) -> Scan {
    let path = coco_file(root).expect("detected");
    let doc = std::fs::read_to_string(&path).map_err(|e| e.to_string()).and_then(|t| parse_coco(&t));
    let Ok(doc) = doc else {
        return Scan { task_type: TaskType::Detection, class_names: vec![], sizes: vec![], per_class: BTreeMap::new() };
    };
    let mut cats = doc.categories.clone();
    cats.sort_by_key(|c| c.id);
    let by_id: BTreeMap<u64, String> = cats.iter().map(|c| (c.id, c.name.clone())).collect();
    let mut per_class: BTreeMap<String, u64> = BTreeMap::new();
    let mut pairs = BTreeSet::new();
    for a in &doc.annotations {
        if let Some(n) = by_id.get(&a.category_id) {
            if pairs.insert((a.image_id, n.clone())) {
                *per_class.entry(n.clone()).or_default() += 1;
            }
        }
    }
    let seg = doc.annotations.iter().any(|a| a.segmentation.is_some());
    Scan {
        task_type: if seg { TaskType::InstanceSeg } else { TaskType::Detection },
        class_names: cats.into_iter().map(|c| c.name).collect(),
        sizes: doc.images.iter().map(|i| (i.width, i.height)).collect(),
        per_class,
    }
}

fn scan_yolo(root: &Path) -> Scan {
    let dir = first_dir(root, YOLO_DIRS).expect("detected");
    let names = class_file(root).unwrap_or_default();
    let mut per_class: BTreeMap<String, u64> = BTreeMap::new();
    let mut max_idx = 0usize;
    for txt in with_ext(&dir, "txt") {
        let Ok(lines) = std::fs::read_to_string(&txt).map_err(|e| (0, e.to_string())).and_then(|t| parse_yolo(&t)) else {
            continue;
        };
        let idx: BTreeSet<usize> = lines.iter().map(|l| l.class_idx).collect();
        for i in idx {
            max_idx = max_idx.max(i + 1);
            let n = names.get(i).cloned().unwrap_or_else(|| format!("class{i}"));
            *per_class.entry(n).or_default() += 1;
        }
    }
    let class_names = if names.is_empty() { (0..max_idx).map(|i| format!("class{i}")).collect() } else { names };
    let sizes = first_dir(root, IMAGE_DIRS).map(|d| probe_all(&images_in(&d))).unwrap_or_default();
    Scan { task_type: TaskType::Detection, class_names, sizes, per_class }
}

fn scan_masks(root: &Path) -> Scan {
    let dir = first_dir(root, MASK_DIRS).expect("detected");
    let dir_name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let task_type = match dir_name {
        "masks_panoptic" => TaskType::PanopticSeg,
        "masks_instance" => TaskType::InstanceSeg,
        _ => TaskType::SemanticSeg,
    };
    let names = class_file(root).unwrap_or_default();
    let mut per_class: BTreeMap<String, u64> = BTreeMap::new();
    let mut sizes = Vec::new();
    let mut max_id = 0u32;
    for png in with_ext(&dir, "png") {
        if task_type == TaskType::SemanticSeg {
            if let Ok(map) = std::fs::read(&png).map_err(|e| e.to_string()).and_then(|b| decode_semantic_png(&b).map_err(|e| e.to_string())) {
                sizes.push(map.dims());
                for id in map.distinct().into_iter().filter(|&i| i > 0) {
                    max_id = max_id.max(id);
                    let n = names.get(id as usize - 1).cloned().unwrap_or_else(|| format!("class{id}"));
                    *per_class.entry(n).or_default() += 1;
                }
                continue;
            }
        }
        if let Ok(d) = probe_dimensions(&png) {
            sizes.push(d);
        }
    }
    let class_names = if names.is_empty() { (1..=max_id).map(|i| format!("class{i}")).collect() } else { names };
    Scan { task_type, class_names, sizes, per_class }
}

/// Detects the layout and gathers class names, counts and image sizes.
pub fn inspect_dataset(root: &Path) -> Result<ExistingDatasetMeta, IntakeError> {
    if !root.is_dir() {
        return Err(IntakeError::RootMissing(root.to_path_buf()));
    }
    let Some(layout) = detect_layout(root) else {
        return Err(if any_image(root) {
            IntakeError::UnrecognizedLayout(root.to_path_buf())
        } else {
            IntakeError::EmptyDataset(root.to_path_buf())
        });
    };
    let scan = match layout {
        AnnotationFormat::ClassDirs => scan_class_dirs(root),
        AnnotationFormat::Voc => scan_voc(root),
        AnnotationFormat::Coco => scan_coco(root),
        AnnotationFormat::Yolo => scan_yolo(root),
        AnnotationFormat::MaskPng => scan_masks(root),
    };
    let Some(sizes) = SizeStats::from_sizes(&scan.sizes) else {
        return Err(IntakeError::EmptyDataset(root.to_path_buf()));
    };
    if scan.class_names.is_empty() {
        return Err(IntakeError::UnrecognizedLayout(root.to_path_buf()));
    }
    let mut per_class_counts = scan.per_class;
    for n in &scan.class_names {
        per_class_counts.entry(n.clone()).or_insert(0);
    }
    Ok(ExistingDatasetMeta {
        root: root.to_path_buf(),
        layout,
        task_type: scan.task_type,
        class_names: scan.class_names,
        image_count: sizes.count,
        sizes,
        per_class_counts,
        conflicts: Vec::new(),
    })
}

fn compatible(layout: AnnotationFormat, t: TaskType) -> bool {
    match layout {
        AnnotationFormat::ClassDirs => t == TaskType::Classification,
        AnnotationFormat::Voc | AnnotationFormat::Yolo => t == TaskType::Detection,
        AnnotationFormat::Coco => matches!(t, TaskType::Detection | TaskType::InstanceSeg | TaskType::PanopticSeg),
        AnnotationFormat::MaskPng => t.is_segmentation(),
    }
}

/// Aligns an Expand spec with the dataset at `root`. The existing class
/// list, uniform image size and layout format win over the demand; every
/// disagreement is reported in `meta.conflicts`.
pub fn resolve_expand_target(spec: &DatasetSpec, root: &Path) -> Result<(DatasetSpec, ExistingDatasetMeta), IntakeError> {
    if spec.task_kind != TaskKind::Expand {
        return Err(IntakeError::NotExpand);
    }
    let mut meta = inspect_dataset(root)?;
    let mut out = spec.clone();
    let mut conflicts = Vec::new();

    if !compatible(meta.layout, spec.task_type) {
        conflicts.push(
            Violation::new("task_type", "conflicts-existing")
                .with_detail(format!("demand {:?}, dataset {:?}", spec.task_type, meta.task_type)),
        );
        out.task_type = meta.task_type;
    }

    if spec.classes.len() != meta.class_names.len() {
        conflicts.push(
            Violation::new("classes", "count-mismatch")
                .with_detail(format!("demand {}, dataset {}", spec.classes.len(), meta.class_names.len())),
        );
    }
    out.classes = meta
        .class_names
        .iter()
        .map(|name| {
            let demanded = spec.classes.iter().find(|c| c.matches(name));
            ClassDef {
                name: name.clone(),
                target_count: spec.per_class_target,
                synonyms: demanded.map(|c| c.synonyms.clone()).unwrap_or_default(),
            }
        })
        .collect();
    for c in &spec.classes {
        if !out.classes.iter().any(|e| e.matches(&c.name)) {
            conflicts.push(Violation::new("classes", "not-in-existing").with_detail(c.name.clone()));
        }
    }

    if let Some(size) = meta.sizes.uniform() {
        if let Some(asked) = spec.target_resolution.filter(|r| *r != size) {
            conflicts.push(
                Violation::new("target_resolution", "conflicts-existing")
                    .with_detail(format!("demand {}x{}, dataset {}x{}", asked.0, asked.1, size.0, size.1)),
            );
        }
        out.target_resolution = Some(size);
    }

    let mut formats: BTreeSet<AnnotationFormat> = [meta.layout].into();
    if out.task_type.is_segmentation() {
        formats.insert(AnnotationFormat::MaskPng);
    }
    out.annotation_formats = formats;
    out.source.existing_root = Some(root.to_path_buf());
    meta.conflicts = conflicts;
    Ok((out, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_spec::{tests::build_spec, validate_spec};
    use crate::image::Image;

    fn png(path: &Path, w: u32, h: u32) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, Image::filled(w, h, 3, 7).encode_png().unwrap()).unwrap();
    }

    fn expand(classes: &[&str], t: TaskType) -> DatasetSpec {
        let mut s = build_spec(classes, t);
        s.task_kind = TaskKind::Expand;
        s
    }

    #[test]
    fn class_dir_tree_inherits_resolution() {
        let dir = tempfile::tempdir().unwrap();
        for c in ["cat", "dog"] {
            for i in 0..3 {
                png(&dir.path().join(c).join(format!("{i}.png")), 32, 32);
            }
        }
        let (spec, meta) = resolve_expand_target(&expand(&["cat", "dog"], TaskType::Classification), dir.path()).unwrap();
        assert_eq!(meta.layout, AnnotationFormat::ClassDirs);
        assert_eq!(spec.target_resolution, Some((32, 32)));
        assert_eq!(meta.per_class_counts["cat"], 3);
        assert_eq!(meta.image_count, 6);
        assert!(meta.conflicts.is_empty());
        assert!(validate_spec(&spec).is_empty());
        let (again, _) = resolve_expand_target(&spec, dir.path()).unwrap();
        assert_eq!(again, spec);
    }

    #[test]
    fn voc_tree() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..2 {
            png(&dir.path().join(format!("JPEGImages/{i}.png")), 20, 10);
            let xml = format!(
                "<annotation><filename>{i}.png</filename><size><width>20</width><height>10</height><depth>3</depth></size>\
                 <object><name>cat</name><bndbox><xmin>1</xmin><ymin>1</ymin><xmax>5</xmax><ymax>5</ymax></bndbox></object></annotation>"
            );
            std::fs::create_dir_all(dir.path().join("Annotations")).unwrap();
            std::fs::write(dir.path().join(format!("Annotations/{i}.xml")), xml).unwrap();
        }
        let (spec, meta) = resolve_expand_target(&expand(&["cat"], TaskType::Detection), dir.path()).unwrap();
        assert_eq!(meta.layout, AnnotationFormat::Voc);
        assert_eq!(spec.annotation_formats, [AnnotationFormat::Voc].into());
        assert_eq!(meta.per_class_counts["cat"], 2);
    }

    #[test]
    fn empty_and_unrecognized() {
        let dir = tempfile::tempdir().unwrap();
        let s = expand(&["cat"], TaskType::Classification);
        assert!(matches!(resolve_expand_target(&s, dir.path()), Err(IntakeError::EmptyDataset(_))));
        png(&dir.path().join("images/a.png"), 4, 4);
        assert!(matches!(resolve_expand_target(&s, dir.path()), Err(IntakeError::UnrecognizedLayout(_))));
        assert!(matches!(resolve_expand_target(&s, &dir.path().join("nope")), Err(IntakeError::RootMissing(_))));
    }

    #[test]
    fn conflicts_are_reported_not_guessed() {
        let dir = tempfile::tempdir().unwrap();
        png(&dir.path().join("cat/0.png"), 32, 32);
        png(&dir.path().join("dog/0.png"), 32, 32);
        let mut s = expand(&["cat", "dog", "fox"], TaskType::Classification);
        s.target_resolution = Some((64, 64));
        let (spec, meta) = resolve_expand_target(&s, dir.path()).unwrap();
        assert_eq!(spec.class_names(), ["cat", "dog"]);
        assert_eq!(spec.target_resolution, Some((32, 32)));
        assert!(meta.conflicts.iter().any(|v| v.is("classes", "count-mismatch")));
        assert!(meta.conflicts.iter().any(|v| v.is("classes", "not-in-existing")));
        assert!(meta.conflicts.iter().any(|v| v.is("target_resolution", "conflicts-existing")));
    }

    #[test]
    fn mixed_sizes_keep_demand_resolution() {
        let dir = tempfile::tempdir().unwrap();
        png(&dir.path().join("cat/0.png"), 32, 32);
        png(&dir.path().join("cat/1.png"), 40, 32);
        let mut s = expand(&["cat"], TaskType::Classification);
        s.target_resolution = Some((16, 16));
        let (spec, meta) = resolve_expand_target(&s, dir.path()).unwrap();
        assert_eq!(spec.target_resolution, Some((16, 16)));
        assert_eq!(meta.sizes.uniform(), None);
    }

    #[test]
    fn detection_order_prefers_voc_over_yolo() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("labels_yolo")).unwrap();
        std::fs::write(dir.path().join("labels_yolo/a.txt"), "0 0.5 0.5 0.2 0.2\n").unwrap();
        assert_eq!(detect_layout(dir.path()), Some(AnnotationFormat::Yolo));
        std::fs::create_dir_all(dir.path().join("annotations_voc")).unwrap();
        std::fs::write(dir.path().join("annotations_voc/a.xml"), "<annotation/>").unwrap();
        assert_eq!(detect_layout(dir.path()), Some(AnnotationFormat::Voc));
    }

    #[test]
    fn build_spec_is_not_expand() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(resolve_expand_target(&build_spec(&["a"], TaskType::Classification), dir.path()), Err(IntakeError::NotExpand)));
    }
}
