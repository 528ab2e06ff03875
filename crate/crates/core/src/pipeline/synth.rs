//! Seeded synthetic corpora for the mock backends: procedural images with
//! sidecar ground truth (analysis, boxes, masks), optional corrupt entries,
//! and small class-folder datasets to expand.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::acquisition::SourceDescriptor;
use crate::dataset_spec::{AnnotationFormat, ClassDef, DataSources, DatasetSpec, QualityConstraints, TaskKind, TaskType};
use crate::gateway::{sidecar_path, Sidecar, SidecarDetection, SidecarMask};
use crate::geometry::NormalizedBox;
use crate::image::Image;
use crate::raster::BitMask;

/// Shape of a synthetic corpus.
#[derive(Debug, Clone)]
pub struct CorpusPlan {
    pub classes: Vec<String>,
    pub per_class: usize,
    pub size: (u32, u32),
    pub seed: u64,
    /// Global positions (0-based, in path order) written as undecodable bytes.
    pub corrupt: Vec<usize>,
    /// Every n-th image gets a high risk score and is rejected.
    pub risky_every: usize,
    /// Every n-th image gets a confidence of exactly 0.5 on its box.
    pub boundary_every: usize,
}

impl CorpusPlan {
    pub fn new(classes: &[&str], per_class: usize, seed: u64) -> Self {
        Self {
            classes: classes.iter().map(|s| s.to_string()).collect(),
            per_class,
            size: (128, 96),
            seed,
            corrupt: Vec::new(),
            risky_every: 7,
            boundary_every: 5,
        }
    }
}

/// What was written, for test bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct CorpusInfo {
    pub images: Vec<PathBuf>,
    pub corrupt: Vec<PathBuf>,
    /// Images whose analysis carries a failing risk score.
    pub risky: BTreeSet<PathBuf>,
}

fn palette(class_idx: usize) -> [u8; 3] {
    const P: [[u8; 3]; 6] = [[200, 60, 40], [40, 160, 70], [50, 80, 210], [210, 190, 40], [160, 60, 180], [40, 190, 190]];
    P[class_idx % P.len()]
}

fn ellipse(w: u32, h: u32, b: &NormalizedBox) -> BitMask {
    let (cx, cy) = b.center();
    let (rx, ry) = (b.width() / 2.0, b.height() / 2.0);
    BitMask::from_fn(w, h, |x, y| {
        let u = ((x as f64 + 0.5) / w as f64 - cx) / rx;
        let v = ((y as f64 + 0.5) / h as f64 - cy) / ry;
        u * u + v * v <= 1.0
    })
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// A canonical analysis document for a synthetic image.
pub fn analysis_doc(id: &str, category: &str, region: &NormalizedBox, size: (u32, u32), risk: f64, occlusion: f64, confidence: f64) -> Value {
    json!({
        "image_id": id,
        "target_category": category,
        "instance_count": 1,
        "fine_grained_attributes": {
            "body": {"value": format!("{category} silhouette"), "region": region.to_array()}
        },
        "background_composition": {"scene_type": "gradient backdrop", "background_distribution": {}},
        "viewpoint_conditions": {
            "camera_angle": "frontal", "camera_elevation": "eye-level", "lighting": "uniform",
            "light_direction_vector": [0.0, -1.0], "depth": "flat"
        },
        "image_quality": {
            "resolution": format!("{}x{}", size.0, size.1),
            "sharpness_score": 0.9, "color_fidelity": "high", "detail_completeness": 0.95,
            "style_consistency": "synthetic", "jpeg_artifacts": false
        },
        "semantic_alignment": {
            "class_prototype": category, "similarity_score": round3(0.8 + 0.19 * (1.0 - risk)),
            "match_features": ["shape", "colour"], "alignment_vector_diff": {}
        },
        "quality_risks": {
            "occlusion_detected": occlusion > 0.0, "occlusion_level": occlusion, "blur_score": 0.05,
            "exposure_abnormality": false, "viewpoint_deviation_score": 0.05, "noise_level": "low",
            "warnings": [], "total_risk_score": risk
        },
        "decision": {"qualified": risk <= 0.5, "confidence": confidence, "reason": "synthetic fixture"}
    })
}

/// Writes `plan` under `dir/<class>/<class>_<n>.png` with sidecars.
pub fn write_corpus(dir: &Path, plan: &CorpusPlan) -> std::io::Result<CorpusInfo> {
    let mut info = CorpusInfo::default();
    let (w, h) = plan.size;
    let mut global = 0usize;
    for (ci, class) in plan.classes.iter().enumerate() {
        let cdir = dir.join(class);
        std::fs::create_dir_all(&cdir)?;
        for n in 0..plan.per_class {
            let path = cdir.join(format!("{class}_{n:04}.png"));
            let pos = global;
            global += 1;
            if plan.corrupt.contains(&pos) {
                std::fs::write(&path, b"\x89PNG\r\n\x1a\nnot really a png")?;
                info.corrupt.push(path);
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ ((pos as u64 + 1) << 20));
            // box sizes spread across the small, medium and large buckets
            let bw = rng.random_range(0.15..0.9);
            let bh = rng.random_range(0.15..0.9);
            let x1 = rng.random_range(0.0..(1.0 - bw));
            let y1 = rng.random_range(0.0..(1.0 - bh));
            let q = |v: f64| (v * 64.0).round() / 64.0;
            let bbox = NormalizedBox::new(q(x1), q(y1), q(x1 + bw).min(1.0), q(y1 + bh).min(1.0)).expect("ordered box");
            let mask = ellipse(w, h, &bbox);
            let fg = palette(ci);
            let shade: u8 = rng.random_range(0..40);
            let img = Image::from_fn(w, h, 3, |x, y, c| {
                if mask.get(x, y) {
                    fg[c as usize].saturating_sub(shade)
                } else {
                    let g = (x * 120 / w.max(1) + y * 60 / h.max(1)) as u8;
                    g.wrapping_add(c * 20).saturating_add(shade / 2)
                }
            });
            std::fs::write(&path, img.encode_png().map_err(std::io::Error::other)?)?;

            let risky = plan.risky_every > 0 && pos % plan.risky_every == plan.risky_every - 1;
            let risk = if risky { 0.8 } else { round3(rng.random_range(0.02..0.3)) };
            let occlusion = if rng.random_bool(0.4) { round3(rng.random_range(0.05..0.9)) } else { 0.0 };
            let boundary = plan.boundary_every > 0 && pos.is_multiple_of(plan.boundary_every);
            let confidence = if boundary { 0.5 } else { round3(rng.random_range(0.55..0.99)) };
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let mut detections = vec![SidecarDetection { class: class.clone(), bbox, confidence, box_prompt_confidence: None }];
            // a weak distractor: below the floor, or rescued by a box-prompt re-query
            let dx = NormalizedBox::new(0.0, 0.0, 0.1, 0.1).expect("box");
            if rng.random_bool(0.5) {
                detections.push(SidecarDetection { class: class.clone(), bbox: dx, confidence: 0.2, box_prompt_confidence: None });
            } else {
                detections.push(SidecarDetection { class: class.clone(), bbox: dx, confidence: 0.4, box_prompt_confidence: Some(0.7) });
            }
            let sidecar = Sidecar {
                analysis: Some(analysis_doc(&id, class, &bbox, (w, h), risk, occlusion, 0.9)),
                detections,
                masks: vec![SidecarMask { class: class.clone(), instance_id: 1, confidence, rle: mask.to_rle(), stuff: false }],
            };
            std::fs::write(sidecar_path(&path), serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes"))?;
            if risky {
                info.risky.insert(path.clone());
            }
            info.images.push(path);
        }
    }
    Ok(info)
}

/// A class-folder dataset of flat-colour `size` images.
pub fn write_class_dir_dataset(root: &Path, classes: &[&str], per_class: usize, size: (u32, u32)) -> std::io::Result<()> {
    for (ci, class) in classes.iter().enumerate() {
        let d = root.join(class);
        std::fs::create_dir_all(&d)?;
        let fg = palette(ci);
        for n in 0..per_class {
            let img = Image::from_fn(size.0, size.1, 3, |x, y, c| fg[c as usize].wrapping_add(((x + y) as u8).wrapping_mul(n as u8 + 1)));
            std::fs::write(d.join(format!("{n:04}.png")), img.encode_png().map_err(std::io::Error::other)?)?;
        }
    }
    Ok(())
}

/// A Build spec over a synthetic corpus, bypassing demand intake.
pub fn build_spec(name: &str, task: TaskType, classes: &[&str], per_class: u64, corpus: &Path) -> DatasetSpec {
    let formats = match task {
        TaskType::Classification => [AnnotationFormat::ClassDirs].into_iter().collect(),
        TaskType::Detection => [AnnotationFormat::Yolo, AnnotationFormat::Voc, AnnotationFormat::Coco].into_iter().collect(),
        _ => [AnnotationFormat::MaskPng, AnnotationFormat::Coco].into_iter().collect(),
    };
    DatasetSpec {
        name: name.into(),
        task_kind: TaskKind::Build,
        task_type: task,
        classes: classes.iter().map(|c| ClassDef::new(*c, per_class)).collect(),
        target_resolution: None,
        annotation_formats: formats,
        per_class_target: per_class,
        source: DataSources { corpus: Some(SourceDescriptor::local_dir(corpus, "synthetic")), existing_root: None },
        quality_constraints: QualityConstraints::default(),
        context_docs: Vec::new(),
    }
}
