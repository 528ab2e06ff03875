//! Deterministic image kernels and the plan executor that chains them.
//!
//! Every kernel is pure: it borrows its input and returns a fresh buffer.
//! [`apply_plan`] also returns the geometric [`Transform`]s it performed so that
//! boxes and masks computed on the original frame can follow the pixels.

mod augment;
mod color;
mod geometry;
mod pixels;
mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{augment, AugmentSpec};
pub use color::{
    color_normalize, convert_color_space, hsv8_to_rgb, lab_to_rgb, rgb_to_hsv8, rgb_to_lab, ColorSpace,
};
pub use geometry::{crop, crop_rect, resize, Interpolation};
pub use pixels::{normalize_pixels, standardize_buffer, standardize_pixels, FloatBuffer};
pub use validate::{validate_annotation_file, validate_mask, validate_mask_bits, LabelFileFormat, MaskCheck};

use crate::geometry::{NormalizedBox, PixelRect};
use crate::image::Image;
use crate::raster::LabelMap;
use crate::violation::Violation;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("crop rectangle {0:?} is empty or outside the image")]
    DegenerateCrop(PixelRect),
    #[error("unsupported conversion {from:?} -> {to:?}: {reason}")]
    UnsupportedConversion { from: ColorSpace, to: ColorSpace, reason: &'static str },
    #[error("channel {channel} has zero variance")]
    ZeroVariance { channel: u8 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("annotation file unreadable: {0}")]
    Unreadable(String),
}

/// One registered operation with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ToolCall {
    Crop {
        #[serde(rename = "box")]
        region: NormalizedBox,
    },
    Resize {
        width: u32,
        height: u32,
        #[serde(default)]
        interpolation: Interpolation,
    },
    ColorNormalize,
    ConvertColor { from: ColorSpace, to: ColorSpace },
    Augment { spec: AugmentSpec },
}

/// Operation ids a plan may reference.
pub const REGISTRY: &[&str] = &["crop", "resize", "color_normalize", "convert_color", "augment"];

impl ToolCall {
    pub fn op_id(&self) -> &'static str {
        match self {
            Self::Crop { .. } => "crop",
            Self::Resize { .. } => "resize",
            Self::ColorNormalize => "color_normalize",
            Self::ConvertColor { .. } => "convert_color",
            Self::Augment { .. } => "augment",
        }
    }

    pub fn is_geometric(&self) -> bool {
        matches!(self, Self::Crop { .. } | Self::Resize { .. } | Self::Augment { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolStep {
    #[serde(flatten)]
    pub call: ToolCall,
    #[serde(default)]
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ToolPlan {
    pub steps: Vec<ToolStep>,
}

impl ToolPlan {
    pub fn push(&mut self, call: ToolCall, justification: impl Into<String>) {
        self.steps.push(ToolStep { call, justification: justification.into() });
    }

    /// Parses a plan document, reporting unknown ops and bad parameters per step.
    pub fn from_json(doc: &serde_json::Value) -> Result<ToolPlan, Vec<Violation>> {
        let steps = doc
            .get("steps")
            .and_then(|s| s.as_array())
            .ok_or_else(|| vec![Violation::new("steps", "required")])?;
        let mut out = ToolPlan::default();
        let mut violations = Vec::new();
        for (i, step) in steps.iter().enumerate() {
            let field = format!("steps[{i}]");
            let op = step.get("op").and_then(|o| o.as_str()).unwrap_or("");
            if !REGISTRY.contains(&op) {
                violations.push(Violation::new(format!("{field}.op"), "unknown-op").with_detail(op));
                continue;
            }
            match serde_json::from_value::<ToolStep>(step.clone()) {
                Ok(s) => out.steps.push(s),
                Err(e) => violations.push(Violation::new(field, "params").with_detail(e.to_string())),
            }
        }
        if violations.is_empty() {
            Ok(out)
        } else {
            Err(violations)
        }
    }

    /// Structural checks: augment parameters in range, and a terminal resize to `target` when one is set.
    pub fn validate(&self, target: Option<(u32, u32)>) -> Vec<Violation> {
        let mut v = Vec::new();
        for (i, s) in self.steps.iter().enumerate() {
            match &s.call {
                ToolCall::Augment { spec } => {
                    if let Err(e) = spec.validate() {
                        v.push(Violation::new(format!("steps[{i}]"), "params").with_detail(e.to_string()));
                    }
                }
                ToolCall::Resize { width, height, .. } if *width == 0 || *height == 0 => {
                    v.push(Violation::new(format!("steps[{i}]"), "params").with_detail("zero size"));
                }
                _ => {}
            }
        }
        if let Some((w, h)) = target {
            let ok = matches!(self.steps.last(), Some(ToolStep { call: ToolCall::Resize { width, height, .. }, .. }) if (*width, *height) == (w, h));
            if !ok {
                v.push(Violation::new("steps", "terminal-resize").with_detail(format!("{w}x{h}")));
            }
        }
        v
    }
}

/// A geometric change applied to the frame, replayable on labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Crop { rect: PixelRect, from: (u32, u32) },
    Resize { from: (u32, u32), to: (u32, u32) },
    FlipH,
    FlipV,
    Rotate { degrees: u32 },
    PadCrop { pad: u32, crop: PixelRect, from: (u32, u32) },
}

impl Transform {
    /// Maps a normalized box through the transform; `None` if nothing of it survives.
    pub fn apply_to_box(&self, b: &NormalizedBox) -> Option<NormalizedBox> {
        let clip = |x1: f64, y1: f64, x2: f64, y2: f64| {
            let (x1, y1, x2, y2) = (x1.clamp(0.0, 1.0), y1.clamp(0.0, 1.0), x2.clamp(0.0, 1.0), y2.clamp(0.0, 1.0));
            if x2 - x1 <= 0.0 || y2 - y1 <= 0.0 {
                None
            } else {
                NormalizedBox::new(x1, y1, x2, y2).ok()
            }
        };
        let window = |ox: f64, oy: f64, w: f64, h: f64, fw: f64, fh: f64| {
            clip(
                (b.x1() * fw - ox) / w,
                (b.y1() * fh - oy) / h,
                (b.x2() * fw - ox) / w,
                (b.y2() * fh - oy) / h,
            )
        };
        match self {
            Self::Crop { rect, from } => window(
                rect.x as f64,
                rect.y as f64,
                rect.width as f64,
                rect.height as f64,
                from.0 as f64,
                from.1 as f64,
            ),
            Self::PadCrop { pad, crop, from } => window(
                crop.x as f64 - *pad as f64,
                crop.y as f64 - *pad as f64,
                crop.width as f64,
                crop.height as f64,
                from.0 as f64,
                from.1 as f64,
            ),
            Self::Resize { .. } => Some(*b),
            Self::FlipH => clip(1.0 - b.x2(), b.y1(), 1.0 - b.x1(), b.y2()),
            Self::FlipV => clip(b.x1(), 1.0 - b.y2(), b.x2(), 1.0 - b.y1()),
            Self::Rotate { degrees: 90 } => clip(1.0 - b.y2(), b.x1(), 1.0 - b.y1(), b.x2()),
            Self::Rotate { degrees: 180 } => clip(1.0 - b.x2(), 1.0 - b.y2(), 1.0 - b.x1(), 1.0 - b.y1()),
            Self::Rotate { .. } => clip(b.y1(), 1.0 - b.x2(), b.y2(), 1.0 - b.x1()),
        }
    }

    /// Maps a label map through the transform with nearest-neighbour sampling.
    pub fn apply_to_map(&self, m: &LabelMap) -> LabelMap {
        let (w, h) = m.dims();
        match self {
            Self::Crop { rect, .. } => m.crop(*rect),
            Self::Resize { to, .. } => m.resize_nearest(to.0, to.1),
            Self::FlipH => LabelMap::from_fn(w, h, |x, y| m.get(w - 1 - x, y)),
            Self::FlipV => LabelMap::from_fn(w, h, |x, y| m.get(x, h - 1 - y)),
            Self::Rotate { degrees: 90 } => LabelMap::from_fn(h, w, |x, y| m.get(y, h - 1 - x)),
            Self::Rotate { degrees: 180 } => LabelMap::from_fn(w, h, |x, y| m.get(w - 1 - x, h - 1 - y)),
            Self::Rotate { .. } => LabelMap::from_fn(h, w, |x, y| m.get(w - 1 - y, x)),
            // mirrored padding carries no labels
            Self::PadCrop { pad, crop, .. } => LabelMap::from_fn(crop.width, crop.height, |x, y| {
                let sx = (crop.x + x) as i64 - *pad as i64;
                let sy = (crop.y + y) as i64 - *pad as i64;
                if sx >= 0 && sy >= 0 && (sx as u32) < w && (sy as u32) < h {
                    m.get(sx as u32, sy as u32)
                } else {
                    0
                }
            }),
        }
    }
}

/// Runs one call.
pub fn apply_call(image: &Image, call: &ToolCall) -> Result<(Image, Option<Transform>), ToolError> {
    let from = image.dims();
    Ok(match call {
        ToolCall::Crop { region } => {
            let rect = region.to_pixel_rect(from.0, from.1);
            (crop_rect(image, rect)?, Some(Transform::Crop { rect, from }))
        }
        ToolCall::Resize { width, height, interpolation } => (
            resize(image, *width, *height, *interpolation)?,
            Some(Transform::Resize { from, to: (*width, *height) }),
        ),
        ToolCall::ColorNormalize => (color_normalize(image)?, None),
        ToolCall::ConvertColor { from: a, to: b } => (convert_color_space(image, *a, *b)?, None),
        ToolCall::Augment { spec } => {
            let t = match spec {
                AugmentSpec::FlipH => Some(Transform::FlipH),
                AugmentSpec::FlipV => Some(Transform::FlipV),
                AugmentSpec::Rotate { degrees } => Some(Transform::Rotate { degrees: *degrees }),
                AugmentSpec::PadCrop { pad, crop } => Some(Transform::PadCrop { pad: *pad, crop: *crop, from }),
                AugmentSpec::GaussianNoise { .. } => None,
            };
            (augment(image, spec)?, t)
        }
    })
}

/// Executes every step in order.
pub fn apply_plan(image: &Image, plan: &ToolPlan) -> Result<(Image, Vec<Transform>), ToolError> {
    let mut cur = image.clone();
    let mut trace = Vec::new();
    for step in &plan.steps {
        let (next, t) = apply_call(&cur, &step.call)?;
        cur = next;
        trace.extend(t);
    }
    Ok((cur, trace))
}
