//! One check per acceptance criterion. Integration tests assert on these
//! and the `acceptance` target prints them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use datasetagent::dataset_spec::{TaskKind, TaskType};
use datasetagent::gateway::Detection;
use datasetagent::geometry::{NormalizedBox, PixelRect};
use datasetagent::image::{probe_dimensions, Image};
use datasetagent::intake::resolve_expand_target;
use datasetagent::labeling::coco::{emit_coco, parse_coco, CocoBuilder, CocoEntry};
use datasetagent::labeling::masks::{
    decode_instance_png, decode_panoptic_png, decode_semantic_png, emit_instance_png, emit_panoptic_png,
    emit_semantic_png, panoptic_id,
};
use datasetagent::labeling::voc::{build_voc, emit_voc, parse_voc};
use datasetagent::labeling::yolo::{emit_yolo, parse_yolo};
use datasetagent::metrics::{self, MetricReport};
use datasetagent::pipeline::synth::{build_spec, write_class_dir_dataset, write_corpus, CorpusPlan};
use datasetagent::pipeline::{
    dataset_report, resume_run, start_run, RunConfig, RunOptions, RunSummary, OUT_DIR, RUN_LOG,
};
use datasetagent::raster::{BitMask, LabelMap};
use datasetagent::supervision::{read_events, CrashPlan, Event, Level};
use datasetagent::tools::{augment, crop_rect, resize, standardize_pixels, AugmentSpec, Interpolation};

use super::oracles;

pub struct Check {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(id: u8, title: &'static str, problems: Vec<String>, ok_detail: String) -> Self {
        let pass = problems.is_empty();
        let detail = if pass { ok_detail } else { problems.join("; ") };
        Self { id, title, pass, detail }
    }

    pub fn line(&self) -> String {
        format!("{} {}. {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.title, self.detail)
    }
}

pub const CLASSES: [&str; 3] = ["cat", "dog", "fox"];

pub fn classification_columns() -> Vec<String> {
    ["CBI", "SSIM", "ALR", "DSE", "SDI", "DDC"].map(String::from).to_vec()
}

pub fn detection_columns() -> Vec<String> {
    let mut c = classification_columns();
    c.extend(["IDDE", "BQI", "OSR"].map(String::from));
    c
}

pub fn segmentation_columns() -> Vec<String> {
    let mut c = classification_columns();
    c.extend(["ESI", "ACS", "PCB"].map(String::from));
    c
}

fn gray_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Image {
    Image::from_fn(w, h, 1, |_, _, _| rng.random_range(0..=255))
}

fn rgb_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Image {
    Image::from_fn(w, h, 3, |_, _, _| rng.random_range(0..=255))
}

fn counts(rng: &mut ChaCha8Rng, k: usize, max: u64) -> Vec<u64> {
    let mut c: Vec<u64> = (0..k).map(|_| rng.random_range(0..=max)).collect();
    if c.iter().all(|&v| v == 0) {
        c[0] = 1;
    }
    c
}

fn normalized(c: &[u64]) -> Vec<f64> {
    let n: u64 = c.iter().sum();
    c.iter().map(|&v| v as f64 / n as f64).collect()
}

/// Criterion 1: every kernel against its brute-force oracle.
pub fn metric_oracles(cases: usize, seed: u64) -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: BTreeMap<&'static str, f64> = BTreeMap::new();
    let mut errors = Vec::new();
    let mut note = |name: &'static str, got: Result<f64, metrics::MetricError>, want: f64| match got {
        Ok(v) => {
            let e = worst.entry(name).or_insert(0.0);
            *e = e.max((v - want).abs());
        }
        Err(err) => errors.push(format!("{name}: {err}")),
    };
    for _ in 0..cases {
        let k = rng.random_range(1..=10);
        let c = counts(&mut rng, k, 60);
        note("CBI", metrics::cbi(&c), oracles::cbi(&c));
        let c = counts(&mut rng, k, 5000);
        note("PCB", metrics::pcb(&c), oracles::pcb(&c));
        let c = counts(&mut rng, k, 60);
        note("DSE", metrics::dse(&c), oracles::dse(&c));

        let n = rng.random_range(2..=8);
        let dim = rng.random_range(1..=6);
        let f: Vec<Vec<f64>> = (0..n)
            .map(|_| loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                if v.iter().map(|x| x * x).sum::<f64>() > 1e-3 {
                    break v;
                }
            })
            .collect();
        note("SDI", metrics::sdi(&f), oracles::sdi(&f));

        let p = normalized(&counts(&mut rng, k, 40));
        let q = normalized(&(0..k).map(|_| rng.random_range(1..=40)).collect::<Vec<u64>>());
        note("DDC", metrics::ddc(&p, &q), oracles::ddc(&p, &q));

        let len = rng.random_range(1..=30);
        let areas: Vec<u64> = (0..len)
            .map(|_| match rng.random_range(0..6) {
                0 => 1024,
                1 => 9216,
                _ => rng.random_range(0..20_000),
            })
            .collect();
        note("IDDE", metrics::idde(&areas), oracles::idde(&areas));

        let len = rng.random_range(1..=20);
        let ious: Vec<f64> = (0..len)
            .map(|_| match rng.random_range(0..5) {
                0 => 0.5,
                1 => 0.7,
                _ => rng.random_range(0.0..=1.0),
            })
            .collect();
        note("BQI", metrics::bqi(&ious), oracles::bqi(&ious));
        let levels: Vec<f64> = (0..len).map(|_| if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..=1.0) }).collect();
        note("OSR", metrics::osr(&levels), oracles::osr(&levels));

        let (w, h) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let a = BitMask::from_fn(w, h, |_, _| rng.random_bool(0.4));
        let mut b = BitMask::from_fn(w, h, |_, _| rng.random_bool(0.4));
        if a.area() + b.area() == 0 {
            b.set(0, 0, true);
        }
        note("Dice", metrics::dice(&a, &b), oracles::dice(a.bits(), b.bits()));

        let (w, h) = (rng.random_range(11..=32), rng.random_range(11..=32));
        let x = gray_image(&mut rng, w, h);
        let y = Image::from_fn(w, h, 1, |px, py, _| x.get(px, py, 0).saturating_add(rng.random_range(0..40)));
        let want = oracles::ssim(&x.luma_f64(), &y.luma_f64(), w as usize, h as usize);
        note("SSIM", metrics::ssim(&x, &y), want);

        let (w, h) = (rng.random_range(3..=32), rng.random_range(3..=32));
        let img = gray_image(&mut rng, w, h);
        let labels = LabelMap::from_fn(w, h, |px, py| u32::from(px * 3 > w) + u32::from(py * 2 > h && rng.random_bool(0.9)));
        let edges = oracles::boundary(labels.data(), w as usize, h as usize);
        let want = oracles::esi(&img.luma_f64(), w as usize, h as usize, &edges);
        note("ESI", metrics::esi_for_mask(&img, &labels), want);
    }
    let elapsed = start.elapsed();
    let mut problems = errors;
    for (name, err) in &worst {
        let tol = if matches!(*name, "SSIM" | "ESI") { 1e-6 } else { 1e-9 };
        if *err > tol {
            problems.push(format!("{name} off by {err:.3e} (tolerance {tol:.0e})"));
        }
    }
    if elapsed > Duration::from_secs(60) {
        problems.push(format!("took {elapsed:?}"));
    }
    let max = worst.values().cloned().fold(0.0, f64::max);
    Check::new(
        1,
        "metric oracle suite",
        problems,
        format!("{cases} cases x {} metrics, max error {max:.1e}, {:.2}s", worst.len(), elapsed.as_secs_f64()),
    )
}

/// Criterion 2: the formula-level values from the metric definitions.
pub fn spot_values() -> Check {
    let mut problems = Vec::new();
    let mut check = |name: &str, got: Result<f64, metrics::MetricError>, want: f64| match got {
        Ok(v) if (v - want).abs() <= 1e-6 => {}
        Ok(v) => problems.push(format!("{name} = {v}, expected {want}")),
        Err(e) => problems.push(format!("{name}: {e}")),
    };
    check("CBI(uniform)", metrics::cbi(&[40, 40, 40, 40, 40]), 0.0);
    check("DSE([50,50])", metrics::dse(&[50, 50]), 1.0);
    check("BQI([0.8,0.6,0.3])", metrics::bqi(&[0.8, 0.6, 0.3]), 0.5);
    check("IDDE(one per bucket)", metrics::idde(&[100, 2000, 10_000]), 3f64.ln());
    let a = BitMask::from_fn(4, 4, |x, y| x < 2 && y < 2);
    let b = BitMask::from_fn(4, 4, |x, y| (1..3).contains(&x) && y < 2);
    check("Dice(half overlap)", metrics::dice(&a, &b), 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rgb_image(&mut rng, 32, 24);
    check("SSIM(x,x)", metrics::ssim(&x, &x), 1.0);
    Check::new(2, "spot values", problems, "CBI, DSE, BQI, IDDE, Dice, SSIM within 1e-6".into())
}

fn events(ws: &Path) -> Vec<Event> {
    read_events(&ws.join(RUN_LOG)).unwrap_or_default()
}

fn index_of(e: &Event) -> Option<u64> {
    e.payload.get("index").and_then(|v| v.as_u64())
}

/// Criterion 3: a 60-image corpus with one corrupt file, interrupted right
/// after the corrupt image is skipped and then resumed.
pub fn corrupt_skip_replay(root: &Path) -> Check {
    let start = Instant::now();
    let src = root.join("corpus");
    let ws = root.join("ws");
    let mut plan = CorpusPlan::new(&CLASSES, 20, 41);
    plan.corrupt = vec![9];
    let corrupt_index = 10u64;
    if let Err(e) = write_corpus(&src, &plan) {
        return Check::new(3, "workflow replay", vec![format!("corpus: {e}")], String::new());
    }
    let spec = build_spec("replay", TaskType::Classification, &CLASSES, 100, &src);
    let mut problems = Vec::new();
    let opts = RunOptions::mock().with_crash(CrashPlan::at_point("skipped", 1));
    if start_run(&ws, "replay", spec, None, RunConfig::default(), opts).is_ok() {
        problems.push("first leg was not interrupted".into());
    }
    let log = events(&ws);
    let failure = log.iter().find(|e| e.level == Level::Error && e.kind == "decode_failure");
    match failure {
        Some(f) if index_of(f) == Some(corrupt_index) => {
            if !log.iter().any(|e| e.seq > f.seq && e.kind == "checkpoint_saved") {
                problems.push("no checkpoint after the failure".into());
            }
            if !log.iter().any(|e| e.kind == "resolution" && e.payload["message"].as_str().is_some_and(|m| m.starts_with("Skip corrupted image"))) {
                problems.push("no skip resolution".into());
            }
        }
        Some(f) => problems.push(format!("failure at index {:?}, expected {corrupt_index}", index_of(f))),
        None => problems.push("no Error event for the corrupt file".into()),
    }
    let summary = match resume_run(&ws, Some("replay"), RunOptions::mock()) {
        Ok(s) => s,
        Err(e) => {
            problems.push(format!("resume failed: {e}"));
            return Check::new(3, "workflow replay", problems, String::new());
        }
    };
    let log = events(&ws);
    match log.iter().find(|e| e.kind == "resumed") {
        Some(r) => {
            if r.payload["next_index"].as_u64() != Some(corrupt_index + 1) {
                problems.push(format!("resumed at {}, expected {}", r.payload["next_index"], corrupt_index + 1));
            }
            let redone = log
                .iter()
                .filter(|e| e.seq > r.seq && matches!(e.kind.as_str(), "commit" | "reject" | "skip"))
                .filter(|e| index_of(e).is_some_and(|i| i <= corrupt_index))
                .count();
            if redone > 0 {
                problems.push(format!("{redone} items before the resume point were redone"));
            }
        }
        None => problems.push("no resumed event".into()),
    }
    let c = &summary.counts;
    if c.consumed != 60 || c.skipped != 1 {
        problems.push(format!("collected {} skipped {}, expected 60 and 1", c.consumed, c.skipped));
    }
    if c.accepted != c.consumed - c.rejected - c.skipped {
        problems.push(format!("accepted {} != {} - {} - {}", c.accepted, c.consumed, c.rejected, c.skipped));
    }
    let line = summary.summary_line();
    if line != format!("DatasetAgent: successfully built replay with {} high-quality images.", c.accepted) {
        problems.push(format!("summary line {line:?}"));
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(30) {
        problems.push(format!("took {elapsed:?}"));
    }
    Check::new(
        3,
        "workflow replay",
        problems,
        format!(
            "skip at #{corrupt_index}, resume at #{}, accepted {} = {} - {} - {}, {:.2}s",
            corrupt_index + 1,
            c.accepted,
            c.consumed,
            c.rejected,
            c.skipped,
            elapsed.as_secs_f64()
        ),
    )
}

fn manifest_bytes(ws: &Path) -> Vec<u8> {
    std::fs::read(ws.join(OUT_DIR).join("manifest.tsv")).unwrap_or_default()
}

/// Criterion 4: kill the run at random hook calls, resume, compare.
pub fn crash_consistency(root: &Path, trials: usize, seed: u64) -> Check {
    let src = root.join("corpus");
    let mut plan = CorpusPlan::new(&CLASSES, 8, 13);
    plan.corrupt = vec![3];
    if let Err(e) = write_corpus(&src, &plan) {
        return Check::new(4, "crash consistency", vec![format!("corpus: {e}")], String::new());
    }
    let spec = build_spec("crashy", TaskType::Detection, &CLASSES, 5, &src);
    let cfg = RunConfig { checkpoint_every: 3, ..RunConfig::default() };
    let counter = Arc::new(CrashPlan::never());
    let mut opts = RunOptions::mock();
    opts.crash = counter.clone();
    let control_ws = root.join("control");
    let control = match start_run(&control_ws, "crashy", spec.clone(), None, cfg.clone(), opts) {
        Ok(s) => s,
        Err(e) => return Check::new(4, "crash consistency", vec![format!("control run: {e}")], String::new()),
    };
    let control_manifest = manifest_bytes(&control_ws);
    let total = counter.calls();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<u64> = if total as usize >= trials {
        sample(&mut rng, total as usize, trials).into_iter().map(|i| i as u64 + 1).collect()
    } else {
        (0..trials).map(|_| rng.random_range(1..=total)).collect()
    };
    let mut problems = Vec::new();
    let mut matched = 0;
    for (t, &n) in points.iter().enumerate() {
        let ws = root.join(format!("trial{t:02}"));
        let opts = RunOptions::mock().with_crash(CrashPlan::at(n));
        if start_run(&ws, "crashy", spec.clone(), None, cfg.clone(), opts).is_ok() {
            problems.push(format!("kill point {n} did not fire"));
            continue;
        }
        match resume_run(&ws, None, RunOptions::mock()) {
            Ok(s) if s.manifest_hash == control.manifest_hash && manifest_bytes(&ws) == control_manifest => matched += 1,
            Ok(s) => problems.push(format!("kill point {n}: hash {} differs", &s.manifest_hash[..12])),
            Err(e) => problems.push(format!("kill point {n}: resume failed: {e}")),
        }
    }
    Check::new(
        4,
        "crash consistency",
        problems,
        format!("{matched}/{} kill points of {total} match hash {}", points.len(), &control.manifest_hash[..12]),
    )
}

fn detection_run(root: &Path) -> Result<(PathBuf, RunSummary), String> {
    let src = root.join("corpus");
    write_corpus(&src, &CorpusPlan::new(&CLASSES, 10, 23)).map_err(|e| e.to_string())?;
    let spec = build_spec("boxes", TaskType::Detection, &CLASSES, 100, &src);
    let ws = root.join("ws");
    let s = start_run(&ws, "boxes", spec, None, RunConfig::default(), RunOptions::mock()).map_err(|e| e.to_string())?;
    Ok((ws, s))
}

/// Criterion 5: no emitted detection below 0.5, and 0.5 itself kept.
pub fn confidence_gate(root: &Path) -> Check {
    let (ws, _) = match detection_run(root) {
        Ok(r) => r,
        Err(e) => return Check::new(5, "confidence gate", vec![e], String::new()),
    };
    let mut scores = Vec::new();
    let coco = std::fs::read_to_string(ws.join(OUT_DIR).join("annotations_coco.json")).map_err(|e| e.to_string()).and_then(|t| parse_coco(&t));
    match coco {
        Ok(doc) => scores.extend(doc.annotations.iter().filter_map(|a| a.score)),
        Err(e) => return Check::new(5, "confidence gate", vec![format!("coco: {e}")], String::new()),
    }
    for entry in std::fs::read_dir(ws.join("records")).into_iter().flatten().flatten() {
        let Ok(v) = std::fs::read_to_string(entry.path()).map(|t| serde_json::from_str::<serde_json::Value>(&t)) else { continue };
        let Ok(v) = v else { continue };
        scores.extend(v["coco"].as_array().into_iter().flatten().filter_map(|c| c["score"].as_f64()));
    }
    let mut problems = Vec::new();
    let below = scores.iter().filter(|&&s| s < 0.5).count();
    let at = scores.iter().filter(|&&s| s == 0.5).count();
    if scores.is_empty() {
        problems.push("no detections emitted".into());
    }
    if below > 0 {
        problems.push(format!("{below} detections below 0.5"));
    }
    if at == 0 {
        problems.push("no detection at exactly 0.5".into());
    }
    Check::new(5, "confidence gate", problems, format!("{} detections, 0 below 0.5, {at} at exactly 0.5", scores.len()))
}

fn random_box(rng: &mut ChaCha8Rng) -> NormalizedBox {
    let q = |v: f64| (v * 200.0).round() / 200.0;
    let x1 = q(rng.random_range(0.0..0.7));
    let y1 = q(rng.random_range(0.0..0.7));
    let x2 = q(x1 + rng.random_range(0.05..0.3));
    let y2 = q(y1 + rng.random_range(0.05..0.3));
    NormalizedBox::new(x1, y1, x2, y2).expect("ordered box")
}

/// Criterion 6: emit, parse, emit again, byte for byte.
pub fn format_round_trips(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes: Vec<String> = CLASSES.map(String::from).to_vec();
    let idx = |c: &str| CLASSES.iter().position(|k| *k == c);
    let mut problems = Vec::new();
    let mut coco = CocoBuilder::new(&classes);
    for i in 0..10 {
        let (w, h) = (rng.random_range(16..48), rng.random_range(16..48));
        let n = rng.random_range(1..4);
        let dets: Vec<Detection> = (0..n)
            .map(|_| Detection::new(CLASSES[rng.random_range(0..3)], random_box(&mut rng), rng.random_range(0.5..1.0)))
            .collect();

        let yolo = emit_yolo(&dets, idx).expect("known classes");
        let back: Vec<Detection> = parse_yolo(&yolo)
            .expect("parses")
            .iter()
            .map(|l| Detection::new(CLASSES[l.class_idx], l.to_box().expect("valid"), 1.0))
            .collect();
        if emit_yolo(&back, idx).expect("known classes") != yolo {
            problems.push(format!("yolo #{i}"));
        }

        let voc = emit_voc(&build_voc("images", &format!("{i}.png"), (w, h), 3, &dets, |c| idx(c).is_some()).expect("voc"));
        if parse_voc(&voc).map(|a| emit_voc(&a)).as_deref() != Ok(voc.as_str()) {
            problems.push(format!("voc #{i}"));
        }

        let masks: Vec<BitMask> = (0..n).map(|_| BitMask::from_fn(w, h, |_, _| rng.random_bool(0.3))).collect();
        let entries: Vec<CocoEntry> = dets
            .iter()
            .zip(&masks)
            .map(|(d, m)| CocoEntry {
                category: d.class.clone(),
                bbox: [d.bbox.x1() * w as f64, d.bbox.y1() * h as f64, d.bbox.width() * w as f64, d.bbox.height() * h as f64],
                mask: Some(m.to_rle()),
                mask_area: Some(m.area()),
                score: d.confidence,
            })
            .collect();
        coco.add_image(&format!("{i}.png"), (w, h), &entries);

        let semantic = LabelMap::from_fn(w, h, |_, _| rng.random_range(0..=3));
        let png = emit_semantic_png(&semantic).expect("semantic");
        if decode_semantic_png(&png).ok().and_then(|m| emit_semantic_png(&m).ok()) != Some(png) {
            problems.push(format!("semantic #{i}"));
        }
        let png = emit_instance_png(&masks[0]).expect("instance");
        if decode_instance_png(&png).ok().and_then(|m| emit_instance_png(&m).ok()) != Some(png) {
            problems.push(format!("instance #{i}"));
        }
        let panoptic = LabelMap::from_fn(w, h, |_, _| match rng.random_range(0..3) {
            0 => 0,
            1 => panoptic_id(rng.random_range(1..=3), 0),
            _ => panoptic_id(rng.random_range(1..=3), rng.random_range(1..=5)),
        });
        let png = emit_panoptic_png(&panoptic).expect("panoptic");
        if decode_panoptic_png(&png).ok().and_then(|m| emit_panoptic_png(&m).ok()) != Some(png) {
            problems.push(format!("panoptic #{i}"));
        }
    }
    let text = emit_coco(&coco.finish());
    if parse_coco(&text).map(|d| emit_coco(&d)).as_deref() != Ok(text.as_str()) {
        problems.push("coco".into());
    }
    let mut rle_fail = 0;
    for _ in 0..50 {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        let p = rng.random_range(0.0..1.0);
        let m = BitMask::from_fn(w, h, |_, _| rng.random_bool(p));
        let rle = m.to_rle();
        if BitMask::from_rle(&rle).ok().as_ref() != Some(&m) || BitMask::from_rle(&rle).map(|b| b.to_rle()).ok() != Some(rle) {
            rle_fail += 1;
        }
    }
    if rle_fail > 0 {
        problems.push(format!("RLE identity failed on {rle_fail}/50 masks"));
    }
    Check::new(6, "format round-trips", problems, "YOLO, VOC, COCO, 3 mask PNG kinds on 10 images; RLE on 50 masks".into())
}

/// Criterion 7: tool-package identities and laws.
pub fn tool_algebra(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut problems = Vec::new();
    for i in 0..20 {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        let img = rgb_image(&mut rng, w, h);
        let twice = augment(&augment(&img, &AugmentSpec::FlipH).unwrap(), &AugmentSpec::FlipH).unwrap();
        if twice != img {
            problems.push(format!("FlipH^2 #{i}"));
        }
        let mut r = img.clone();
        for _ in 0..4 {
            r = augment(&r, &AugmentSpec::Rotate { degrees: 90 }).unwrap();
        }
        if r != img {
            problems.push(format!("Rotate(90)^4 #{i}"));
        }
        if resize(&img, w, h, Interpolation::Bilinear).ok().as_ref() != Some(&img) {
            problems.push(format!("resize-to-self #{i}"));
        }
        let varied = Image::from_fn(w + 1, h, 3, |x, y, c| if x == 0 { c * 7 } else { img.get(x - 1, y, c).wrapping_add(1) });
        match standardize_pixels(&varied) {
            Ok(buf) => {
                for c in 0..3 {
                    let v: Vec<f64> = buf.channel(c).collect();
                    let n = v.len() as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                    if mean.abs() > 1e-9 || (std - 1.0).abs() > 1e-9 {
                        problems.push(format!("standardize #{i} channel {c}: mean {mean:e} std {std}"));
                    }
                }
            }
            Err(e) => problems.push(format!("standardize #{i}: {e}")),
        }
    }
    let mut law = 0;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(2..50), rng.random_range(2..50));
        let img = rgb_image(&mut rng, w, h);
        let r1w = rng.random_range(1..=w);
        let r1h = rng.random_range(1..=h);
        let r1 = PixelRect::new(rng.random_range(0..=w - r1w), rng.random_range(0..=h - r1h), r1w, r1h);
        let r2w = rng.random_range(1..=r1w);
        let r2h = rng.random_range(1..=r1h);
        let r2 = PixelRect::new(rng.random_range(0..=r1w - r2w), rng.random_range(0..=r1h - r2h), r2w, r2h);
        let nested = crop_rect(&crop_rect(&img, r1).unwrap(), r2).unwrap();
        let composed = crop_rect(&img, PixelRect::new(r1.x + r2.x, r1.y + r2.y, r2.width, r2.height)).unwrap();
        if nested == composed {
            law += 1;
        }
    }
    if law != 100 {
        problems.push(format!("crop composition held on {law}/100 pairs"));
    }
    Check::new(7, "tool algebra", problems, "FlipH^2, Rotate(90)^4, resize-to-self, standardize, crop law on 100 pairs".into())
}

/// Criterion 8: expanding a 32x32 class-folder dataset yields 32x32 images.
pub fn expand_resolution(root: &Path) -> Check {
    let existing = root.join("tiny");
    let src = root.join("corpus");
    let ws = root.join("ws");
    let mut problems = Vec::new();
    let setup = write_class_dir_dataset(&existing, &CLASSES, 4, (32, 32)).and_then(|_| write_corpus(&src, &CorpusPlan::new(&CLASSES, 6, 31)));
    if let Err(e) = setup {
        return Check::new(8, "spec-resolution conformance", vec![format!("fixtures: {e}")], String::new());
    }
    let mut demand = build_spec("tiny", TaskType::Classification, &CLASSES, 3, &src);
    demand.task_kind = TaskKind::Expand;
    let (spec, meta) = match resolve_expand_target(&demand, &existing) {
        Ok(r) => r,
        Err(e) => return Check::new(8, "spec-resolution conformance", vec![format!("intake: {e}")], String::new()),
    };
    if spec.target_resolution != Some((32, 32)) {
        problems.push(format!("target resolution {:?}", spec.target_resolution));
    }
    let summary = match start_run(&ws, "tiny", spec, Some(meta), RunConfig::default(), RunOptions::mock()) {
        Ok(s) => s,
        Err(e) => return Check::new(8, "spec-resolution conformance", vec![format!("run: {e}")], String::new()),
    };
    let mut sizes: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for class in CLASSES {
        for entry in std::fs::read_dir(ws.join(OUT_DIR).join(class)).into_iter().flatten().flatten() {
            match probe_dimensions(&entry.path()) {
                Ok(d) => *sizes.entry(d).or_default() += 1,
                Err(e) => problems.push(format!("{}: {e}", entry.path().display())),
            }
        }
    }
    let n: usize = sizes.values().sum();
    if n == 0 {
        problems.push("no images emitted".into());
    }
    if sizes.keys().any(|d| *d != (32, 32)) {
        problems.push(format!("sizes {sizes:?}"));
    }
    if n as u64 != summary.added() {
        problems.push(format!("{n} files for {} added images", summary.added()));
    }
    Check::new(8, "spec-resolution conformance", problems, format!("{n} added images, all 32x32"))
}

fn write_png(path: &Path, img: &Image) {
    std::fs::create_dir_all(path.parent().expect("parent")).expect("dir");
    std::fs::write(path, img.encode_png().expect("encodes")).expect("write");
}

/// A detection tree in YOLO layout.
pub fn yolo_fixture(root: &Path, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(root.join("labels")).expect("dir");
    std::fs::write(root.join("classes.txt"), CLASSES.join("\n") + "\n").expect("classes");
    for i in 0..6 {
        write_png(&root.join(format!("images/{i}.png")), &rgb_image(&mut rng, 64, 48));
        let dets: Vec<Detection> = (0..3).map(|k| Detection::new(CLASSES[(i + k) % 3], random_box(&mut rng), 0.9)).collect();
        let text = emit_yolo(&dets, |c| CLASSES.iter().position(|k| *k == c)).expect("yolo");
        std::fs::write(root.join(format!("labels/{i}.txt")), text).expect("labels");
    }
}

/// A semantic segmentation tree with paletted masks.
pub fn mask_fixture(root: &Path, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(root.join("masks_semantic")).expect("dir");
    std::fs::write(root.join("classes.txt"), CLASSES.join("\n") + "\n").expect("classes");
    for i in 0..6 {
        write_png(&root.join(format!("images/{i}.png")), &rgb_image(&mut rng, 40, 30));
        let cut = rng.random_range(5..35);
        let map = LabelMap::from_fn(40, 30, |x, y| if x < cut { 1 + (y > 15) as u32 } else { 3 * (y % 2 == 0) as u32 });
        let png = emit_semantic_png(&map).expect("mask");
        std::fs::write(root.join(format!("masks_semantic/{i}.png")), png).expect("mask");
    }
}

/// Criterion 9: report columns per task family.
pub fn report_columns(root: &Path) -> Check {
    let cls = root.join("cls");
    let det = root.join("det");
    let seg = root.join("seg");
    if let Err(e) = write_class_dir_dataset(&cls, &CLASSES, 3, (24, 24)) {
        return Check::new(9, "report completeness", vec![e.to_string()], String::new());
    }
    yolo_fixture(&det, 5);
    mask_fixture(&seg, 6);
    let mut problems = Vec::new();
    let cases = [
        ("classification", cls, classification_columns()),
        ("detection", det, detection_columns()),
        ("segmentation", seg, segmentation_columns()),
    ];
    for (name, dir, want) in cases {
        match dataset_report(&dir, None, None) {
            Ok(MetricReport { columns, .. }) if columns == want => {}
            Ok(r) => problems.push(format!("{name}: {:?}", r.columns)),
            Err(e) => problems.push(format!("{name}: {e}")),
        }
    }
    Check::new(9, "report completeness", problems, "classification, detection and segmentation column sets".into())
}

pub fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}
