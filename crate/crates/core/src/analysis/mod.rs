//! Per-image analysis: parsing, alignment and risk scoring, the
//! accept/reject gate, and tool planning.

mod parse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{
    extract_json, parse_analysis, AnalysisDecision, Attribute, BackgroundComposition, ImageAnalysis, ImageQuality,
    NoiseLevel, QualityRisks, SemanticAlignment, ViewpointConditions,
};

use crate::dataset_spec::DatasetSpec;
use crate::geometry::NormalizedBox;
use crate::tools::{Interpolation, ToolCall, ToolPlan};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("schema violation at {field}: {rule}")]
    SchemaViolation { field: String, rule: String },
    #[error("reply is not an analysis document")]
    NotADocument,
}

/// Similarity score when the category names a spec class (or synonym), else 0.
pub fn score_alignment(analysis: &ImageAnalysis, spec: &DatasetSpec) -> f64 {
    match spec.match_class(&analysis.target_category) {
        Some(_) => analysis.semantic_alignment.similarity_score,
        None => 0.0,
    }
}

/// The reported total risk, or the largest individual risk when none is reported.
pub fn assess_risk(analysis: &ImageAnalysis) -> f64 {
    let r = &analysis.quality_risks;
    r.total_risk_score.unwrap_or_else(|| {
        let exposure = if r.exposure_abnormality { 1.0 } else { 0.0 };
        r.blur_score.max(r.viewpoint_deviation_score).max(r.occlusion_level.unwrap_or(0.0)).max(exposure)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Alignment,
    Risk,
    Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub accept: bool,
    /// First gate that failed.
    pub failed_gate: Option<Gate>,
    pub reason: String,
    pub alignment: f64,
    pub risk: f64,
    /// Confidence reported by the analyser.
    pub confidence: f64,
}

/// Accepts iff alignment, risk and resolution all clear the spec's constraints.
pub fn decide(analysis: &ImageAnalysis, spec: &DatasetSpec) -> Decision {
    let q = &spec.quality_constraints;
    let alignment = score_alignment(analysis, spec);
    let risk = assess_risk(analysis);
    let (w, h) = analysis.image_quality.resolution;
    let failed_gate = if alignment < q.min_alignment_score {
        Some(Gate::Alignment)
    } else if risk > q.max_risk_score {
        Some(Gate::Risk)
    } else if w < q.min_resolution.0 || h < q.min_resolution.1 {
        Some(Gate::Resolution)
    } else {
        None
    };
    let reason = match failed_gate {
        None => format!("alignment {alignment:.3}, risk {risk:.3}, resolution {w}x{h} within constraints"),
        Some(Gate::Alignment) => format!("alignment {alignment:.3} below {:.3}", q.min_alignment_score),
        Some(Gate::Risk) => format!("risk {risk:.3} above {:.3}", q.max_risk_score),
        Some(Gate::Resolution) => {
            format!("resolution {w}x{h} below {}x{}", q.min_resolution.0, q.min_resolution.1)
        }
    };
    Decision {
        accept: failed_gate.is_none(),
        failed_gate,
        reason,
        alignment,
        risk,
        confidence: analysis.decision.confidence,
    }
}

/// Object regions covering less than this share of the frame trigger a crop.
pub const CROP_COVERAGE: f64 = 0.4;
/// Crop padding as a fraction of the union box's own size.
pub const CROP_PAD: f64 = 0.05;

/// Rule-based preprocessing plan for an accepted image.
pub fn plan_tools(analysis: &ImageAnalysis, spec: &DatasetSpec) -> ToolPlan {
    let mut plan = ToolPlan::default();
    let regions = analysis.object_regions();
    if let Some(union) = regions.iter().copied().reduce(|a, b| a.union(&b)) {
        if union.area() < CROP_COVERAGE {
            let padded = union.padded(CROP_PAD);
            plan.push(
                ToolCall::Crop { region: padded },
                format!("object regions cover {:.1}% of the frame", union.area() * 100.0),
            );
        }
    }
    if !analysis.image_quality.color_fidelity.trim().eq_ignore_ascii_case("high") {
        plan.push(
            ToolCall::ColorNormalize,
            format!("colour fidelity reported as {:?}", analysis.image_quality.color_fidelity),
        );
    }
    if let Some((w, h)) = spec.target_resolution {
        let (sw, sh) = current_size(analysis, &plan);
        let interpolation = if w > sw || h > sh { Interpolation::Bicubic } else { Interpolation::Bilinear };
        plan.push(ToolCall::Resize { width: w, height: h, interpolation }, format!("dataset resolution {w}x{h}"));
    }
    plan
}

fn current_size(analysis: &ImageAnalysis, plan: &ToolPlan) -> (u32, u32) {
    let (w, h) = analysis.image_quality.resolution;
    plan.steps
        .iter()
        .find_map(|s| match &s.call {
            ToolCall::Crop { region } => {
                let r: NormalizedBox = *region;
                let px = r.to_pixel_rect(w, h);
                Some((px.width, px.height))
            }
            _ => None,
        })
        .unwrap_or((w, h))
}
