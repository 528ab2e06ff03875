//! Conformance checks for emitted annotation files and masks.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ToolError;
use crate::labeling::{coco::parse_coco, voc::parse_voc, yolo::parse_yolo};
use crate::raster::{BitMask, LabelMap};
use crate::violation::Violation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelFileFormat {
    Yolo,
    Voc,
    Coco,
}

const TOL: f64 = 1e-6;

/// Empty iff the file parses, names only known classes, keeps every box
/// inside its image and (COCO) uses unique ids.
pub fn validate_annotation_file(
    path: &Path,
    format: LabelFileFormat,
    dims: (u32, u32),
    classes: &[String],
) -> Result<Vec<Violation>, ToolError> {
    let text = std::fs::read_to_string(path).map_err(|e| ToolError::Unreadable(format!("{}: {e}", path.display())))?;
    Ok(match format {
        LabelFileFormat::Yolo => check_yolo(&text, classes.len()),
        LabelFileFormat::Voc => check_voc(&text, dims, classes),
        LabelFileFormat::Coco => check_coco(&text, classes),
    })
}

fn check_yolo(text: &str, n_classes: usize) -> Vec<Violation> {
    let lines = match parse_yolo(text) {
        Ok(l) => l,
        Err((line, msg)) => return vec![Violation::new(format!("line {line}"), "parse").with_detail(msg)],
    };
    let mut v = Vec::new();
    for (i, l) in lines.iter().enumerate() {
        let field = format!("line {}", i + 1);
        if l.class_idx >= n_classes {
            v.push(Violation::new(field.clone(), "unknown-class").with_detail(l.class_idx.to_string()));
        }
        if !l.in_bounds(TOL) {
            v.push(Violation::new(field, "out-of-bounds"));
        }
    }
    v
}

fn check_voc(text: &str, dims: (u32, u32), classes: &[String]) -> Vec<Violation> {
    let a = match parse_voc(text) {
        Ok(a) => a,
        Err(e) => return vec![Violation::new("annotation", "parse").with_detail(e)],
    };
    let mut v = Vec::new();
    if (a.width, a.height) != dims {
        v.push(Violation::new("size", "dims").with_detail(format!("{}x{} vs {}x{}", a.width, a.height, dims.0, dims.1)));
    }
    for (i, o) in a.objects.iter().enumerate() {
        let field = format!("object[{i}]");
        if !classes.contains(&o.name) {
            v.push(Violation::new(field.clone(), "unknown-class").with_detail(o.name.clone()));
        }
        let inside = o.xmin >= 1 && o.ymin >= 1 && o.xmin <= o.xmax && o.ymin <= o.ymax && o.xmax <= a.width && o.ymax <= a.height;
        if !inside {
            v.push(Violation::new(field, "out-of-bounds"));
        }
    }
    v
}

fn check_coco(text: &str, classes: &[String]) -> Vec<Violation> {
    let doc = match parse_coco(text) {
        Ok(d) => d,
        Err(e) => return vec![Violation::new("document", "parse").with_detail(e)],
    };
    let mut v = Vec::new();
    let mut dup = |kind: &str, ids: Vec<u64>| {
        let mut seen = HashSet::new();
        for (i, id) in ids.into_iter().enumerate() {
            if !seen.insert(id) {
                v.push(Violation::new(format!("{kind}[{i}].id"), "duplicate-id").with_detail(id.to_string()));
            }
        }
    };
    dup("images", doc.images.iter().map(|x| x.id).collect());
    dup("annotations", doc.annotations.iter().map(|x| x.id).collect());
    dup("categories", doc.categories.iter().map(|x| x.id).collect());
    let images: HashMap<u64, (u32, u32)> = doc.images.iter().map(|i| (i.id, (i.width, i.height))).collect();
    let cats: HashSet<u64> = doc.categories.iter().map(|c| c.id).collect();
    for (i, c) in doc.categories.iter().enumerate() {
        if !classes.contains(&c.name) {
            v.push(Violation::new(format!("categories[{i}].name"), "unknown-class").with_detail(c.name.clone()));
        }
    }
    for (i, a) in doc.annotations.iter().enumerate() {
        let field = format!("annotations[{i}]");
        if !cats.contains(&a.category_id) {
            v.push(Violation::new(format!("{field}.category_id"), "unknown-class").with_detail(a.category_id.to_string()));
        }
        match images.get(&a.image_id) {
            None => v.push(Violation::new(format!("{field}.image_id"), "dangling-ref").with_detail(a.image_id.to_string())),
            Some(&(w, h)) => {
                let [x, y, bw, bh] = a.bbox;
                let inside = x >= -TOL && y >= -TOL && bw > 0.0 && bh > 0.0 && x + bw <= w as f64 + TOL && y + bh <= h as f64 + TOL;
                if !inside {
                    v.push(Violation::new(format!("{field}.bbox"), "out-of-bounds"));
                }
                if let Some(rle) = &a.segmentation {
                    if rle.size != [h, w] {
                        v.push(Violation::new(format!("{field}.segmentation"), "dims"));
                    }
                }
            }
        }
    }
    v
}

/// Thresholds for mask plausibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskCheck {
    /// Enclosed background components smaller than this are holes.
    pub hole_max: u64,
    /// Boundary pixels per unit of bounding-box half-perimeter above which a region is jagged.
    pub jag_ratio: f64,
}

impl Default for MaskCheck {
    fn default() -> Self {
        Self { hole_max: 16, jag_ratio: 4.0 }
    }
}

pub fn validate_mask_bits(mask: &BitMask, dims: (u32, u32), check: &MaskCheck) -> Vec<Violation> {
    validate_mask(&LabelMap::from_mask(mask, 1), dims, check)
}

/// Flags small enclosed holes, jagged regions and a size mismatch. Label 0 is background.
pub fn validate_mask(map: &LabelMap, dims: (u32, u32), check: &MaskCheck) -> Vec<Violation> {
    if map.dims() != dims {
        let (w, h) = map.dims();
        return vec![Violation::new("mask", "dims").with_detail(format!("{w}x{h} vs {}x{}", dims.0, dims.1))];
    }
    let mut v = Vec::new();
    for (area, enclosing) in background_components(map) {
        if let Some(class) = enclosing {
            if area < check.hole_max {
                v.push(Violation::new(format!("class {class}"), "hole").with_detail(format!("{area} px")));
            }
        }
    }
    let boundary = map.boundary_pixels();
    for class in map.distinct().into_iter().filter(|&c| c != 0) {
        let Some(bb) = map.mask_of(class).bbox() else { continue };
        let count = boundary.iter().filter(|&&(x, y)| map.get(x, y) == class).count() as f64;
        let ratio = count / (2.0 * (bb.width + bb.height) as f64);
        if ratio > check.jag_ratio {
            v.push(Violation::new(format!("class {class}"), "jagged").with_detail(format!("ratio {ratio:.2}")));
        }
    }
    v
}

/// 4-connected background components: (area, the single surrounding label if enclosed by one label).
fn background_components(map: &LabelMap) -> Vec<(u64, Option<u32>)> {
    let (w, h) = map.dims();
    let mut seen = vec![false; (w * h) as usize];
    let mut out = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            let i = (sy * w + sx) as usize;
            if seen[i] || map.get(sx, sy) != 0 {
                continue;
            }
            seen[i] = true;
            let mut queue = VecDeque::from([(sx, sy)]);
            let mut area = 0u64;
            let mut touches_edge = false;
            let mut neighbours = HashSet::new();
            while let Some((x, y)) = queue.pop_front() {
                area += 1;
                if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                    touches_edge = true;
                }
                let cand = [
                    (x.wrapping_sub(1), y),
                    (x + 1, y),
                    (x, y.wrapping_sub(1)),
                    (x, y + 1),
                ];
                for (nx, ny) in cand {
                    if nx >= w || ny >= h {
                        continue;
                    }
                    let l = map.get(nx, ny);
                    if l != 0 {
                        neighbours.insert(l);
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
            let enclosing = (!touches_edge && neighbours.len() == 1).then(|| *neighbours.iter().next().unwrap());
            out.push((area, enclosing));
        }
    }
    out
}
