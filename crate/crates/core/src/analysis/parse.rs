//! Strict reader for per-image analysis documents.
//!
//! The reader accepts the loose shapes multimodal models actually emit
//! (attribute regions as sibling `*_region`/`*_box` keys or nested inside an
//! attribute object, resolution as `"WxH"`, percentages as strings) and
//! produces one canonical [`ImageAnalysis`]. [`ImageAnalysis::to_value`]
//! writes the canonical form, which the reader maps back to the same value.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::AnalysisError;
use crate::geometry::NormalizedBox;

/// A fine-grained attribute: a value, a region, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub value: Value,
    pub region: Option<NormalizedBox>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BackgroundComposition {
    pub scene_type: String,
    pub regions: BTreeMap<String, NormalizedBox>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ViewpointConditions {
    pub camera_angle: String,
    pub camera_elevation: String,
    pub lighting: String,
    pub light_direction_vector: [f64; 2],
    pub depth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageQuality {
    pub resolution: (u32, u32),
    pub sharpness_score: f64,
    pub color_fidelity: String,
    pub detail_completeness: f64,
    pub style_consistency: String,
    pub jpeg_artifacts: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SemanticAlignment {
    pub class_prototype: String,
    pub similarity_score: f64,
    pub match_features: Vec<String>,
    pub alignment_vector_diff: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLevel {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRisks {
    pub occlusion_detected: bool,
    pub occlusion_level: Option<f64>,
    pub blur_score: f64,
    pub exposure_abnormality: bool,
    pub viewpoint_deviation_score: f64,
    pub noise_level: NoiseLevel,
    pub warnings: Vec<String>,
    pub total_risk_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisDecision {
    pub qualified: bool,
    pub confidence: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnalysis {
    pub image_id: String,
    pub target_category: String,
    pub instance_count: u32,
    pub fine_grained_attributes: BTreeMap<String, Attribute>,
    pub background_composition: BackgroundComposition,
    pub viewpoint_conditions: ViewpointConditions,
    pub image_quality: ImageQuality,
    pub semantic_alignment: SemanticAlignment,
    pub quality_risks: QualityRisks,
    pub decision: AnalysisDecision,
    /// Unrecognised top-level fields, kept verbatim.
    pub extras: BTreeMap<String, Value>,
}

const KNOWN_TOP: &[&str] = &[
    "image_id",
    "target_category",
    "instance_count",
    "fine_grained_attributes",
    "background_composition",
    "viewpoint_conditions",
    "image_quality",
    "semantic_alignment",
    "quality_risks",
    "decision",
];

fn violation(field: impl Into<String>, rule: &str) -> AnalysisError {
    AnalysisError::SchemaViolation { field: field.into(), rule: rule.to_string() }
}

/// Field reader that carries the dotted path for error messages.
struct Obj<'a> {
    path: String,
    map: &'a Map<String, Value>,
}

impl<'a> Obj<'a> {
    fn at(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn req(&self, key: &str) -> Result<&'a Value, AnalysisError> {
        self.get(key).ok_or_else(|| violation(self.at(key), "required"))
    }

    fn obj(&self, key: &str) -> Result<Obj<'a>, AnalysisError> {
        match self.req(key)? {
            Value::Object(map) => Ok(Obj { path: self.at(key), map }),
            _ => Err(violation(self.at(key), "type")),
        }
    }

    fn string(&self, key: &str) -> Result<String, AnalysisError> {
        match self.req(key)? {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(violation(self.at(key), "type")),
        }
    }

    fn string_or_default(&self, key: &str) -> Result<String, AnalysisError> {
        if self.get(key).is_none() {
            return Ok(String::new());
        }
        self.string(key)
    }

    fn boolean(&self, key: &str) -> Result<bool, AnalysisError> {
        match self.req(key)? {
            Value::Bool(b) => Ok(*b),
            Value::String(s) if s.eq_ignore_ascii_case("true") => Ok(true),
            Value::String(s) if s.eq_ignore_ascii_case("false") => Ok(false),
            _ => Err(violation(self.at(key), "type")),
        }
    }

    fn number_value(&self, key: &str, v: &Value) -> Result<f64, AnalysisError> {
        let n = match v {
            Value::Number(n) => n.as_f64(),
            Value::String(s) => s.trim().trim_end_matches('%').trim().parse::<f64>().ok(),
            _ => None,
        };
        n.filter(|x| x.is_finite()).ok_or_else(|| violation(self.at(key), "type"))
    }

    fn ranged(&self, key: &str, lo: f64, hi: f64) -> Result<f64, AnalysisError> {
        let v = self.number_value(key, self.req(key)?)?;
        if v < lo || v > hi {
            return Err(violation(self.at(key), "range"));
        }
        Ok(v)
    }

    fn opt_ranged(&self, key: &str, lo: f64, hi: f64) -> Result<Option<f64>, AnalysisError> {
        if self.get(key).is_none() {
            return Ok(None);
        }
        self.ranged(key, lo, hi).map(Some)
    }

    fn strings(&self, key: &str) -> Result<Vec<String>, AnalysisError> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| v.as_str().map(str::to_string).ok_or_else(|| violation(self.at(key), "type")))
                .collect(),
            Some(_) => Err(violation(self.at(key), "type")),
        }
    }
}

fn parse_box(field: &str, v: &Value) -> Result<NormalizedBox, AnalysisError> {
    let arr = v.as_array().ok_or_else(|| violation(field, "type"))?;
    let nums: Option<Vec<f64>> = arr.iter().map(Value::as_f64).collect();
    let nums = nums.filter(|n| n.len() == 4).ok_or_else(|| violation(field, "box-shape"))?;
    NormalizedBox::from_slice(&nums).map_err(|e| violation(field, e.rule()))
}

fn is_box_like(v: &Value) -> bool {
    matches!(v, Value::Array(a) if a.len() == 4 && a.iter().all(Value::is_number))
}

fn is_region_key(k: &str) -> bool {
    k == "region" || k.ends_with("_region") || k.ends_with("_box") || k.ends_with("_bounding_box")
}

fn parse_attribute(field: &str, v: &Value) -> Result<Attribute, AnalysisError> {
    match v {
        Value::Object(map) => {
            let canonical = map.contains_key("value") && map.keys().all(|k| k == "value" || k == "region");
            if canonical {
                let region = match map.get("region").filter(|r| !r.is_null()) {
                    Some(r) => Some(parse_box(&format!("{field}.region"), r)?),
                    None => None,
                };
                return Ok(Attribute { value: map["value"].clone(), region });
            }
            let mut region = None;
            let mut rest = Map::new();
            for (k, sub) in map {
                if region.is_none() && is_region_key(k) && is_box_like(sub) {
                    region = Some(parse_box(&format!("{field}.{k}"), sub)?);
                } else if is_region_key(k) && sub.is_array() {
                    // second region, or a malformed one: validate it but keep it in the value
                    parse_box(&format!("{field}.{k}"), sub)?;
                    rest.insert(k.clone(), sub.clone());
                } else {
                    rest.insert(k.clone(), sub.clone());
                }
            }
            Ok(Attribute { value: Value::Object(rest), region })
        }
        Value::Array(_) if is_box_like(v) || is_region_key(field.rsplit('.').next().unwrap_or("")) => {
            Ok(Attribute { value: Value::Null, region: Some(parse_box(field, v)?) })
        }
        other => Ok(Attribute { value: other.clone(), region: None }),
    }
}

/// Moves a region-only attribute such as `pose_bounding_box` onto the
/// attribute it names (`pose`, or a unique `pose_*`) when that one has no region.
fn fold_sibling_regions(attrs: &mut BTreeMap<String, Attribute>) {
    let keys: Vec<String> = attrs.keys().cloned().collect();
    for k in keys {
        let Some(stem) = ["_bounding_box", "_region", "_box"].iter().find_map(|s| k.strip_suffix(s)) else {
            continue;
        };
        let a = &attrs[&k];
        let Some(region) = a.region.filter(|_| a.value.is_null()) else {
            continue;
        };
        let target = if attrs.contains_key(stem) {
            Some(stem.to_string())
        } else {
            let prefix = format!("{stem}_");
            let mut hits = attrs.keys().filter(|o| **o != k && o.starts_with(&prefix));
            match (hits.next(), hits.next()) {
                (Some(one), None) => Some(one.clone()),
                _ => None,
            }
        };
        if let Some(t) = target.filter(|t| attrs[t].region.is_none()) {
            attrs.get_mut(&t).expect("key present").region = Some(region);
            attrs.remove(&k);
        }
    }
}

fn parse_resolution(field: &str, v: &Value) -> Result<(u32, u32), AnalysisError> {
    let pair = match v {
        Value::String(s) => {
            let mut it = s.split(['x', 'X', '×', '*']).map(|p| p.trim().parse::<u32>().ok());
            match (it.next().flatten(), it.next().flatten(), it.next()) {
                (Some(w), Some(h), None) => Some((w, h)),
                _ => None,
            }
        }
        Value::Array(a) if a.len() == 2 => match (a[0].as_u64(), a[1].as_u64()) {
            (Some(w), Some(h)) => Some((w as u32, h as u32)),
            _ => None,
        },
        Value::Object(m) => match (m.get("width").and_then(Value::as_u64), m.get("height").and_then(Value::as_u64)) {
            (Some(w), Some(h)) => Some((w as u32, h as u32)),
            _ => None,
        },
        _ => None,
    };
    let (w, h) = pair.ok_or_else(|| violation(field, "format"))?;
    if w == 0 || h == 0 {
        return Err(violation(field, "positive"));
    }
    Ok((w, h))
}

/// Parses and validates an analysis document. A JSON string holding a
/// document (optionally wrapped in prose or a code fence) is unwrapped first.
pub fn parse_analysis(raw: &Value) -> Result<ImageAnalysis, AnalysisError> {
    let owned;
    let raw = match raw {
        Value::String(s) => {
            owned = extract_json(s).ok_or(AnalysisError::NotADocument)?;
            &owned
        }
        other => other,
    };
    let map = match raw {
        Value::Object(m) if !m.is_empty() => m,
        _ => return Err(AnalysisError::NotADocument),
    };
    let top = Obj { path: String::new(), map };

    let mut attrs = BTreeMap::new();
    if let Some(v) = top.get("fine_grained_attributes") {
        let m = v.as_object().ok_or_else(|| violation("fine_grained_attributes", "type"))?;
        for (k, sub) in m {
            attrs.insert(k.clone(), parse_attribute(&format!("fine_grained_attributes.{k}"), sub)?);
        }
        fold_sibling_regions(&mut attrs);
    }

    let bg = top.obj("background_composition")?;
    let mut regions = BTreeMap::new();
    let region_src = bg.get("regions").or_else(|| bg.get("background_distribution"));
    if let Some(v) = region_src {
        let key = if bg.get("regions").is_some() { "regions" } else { "background_distribution" };
        let m = v.as_object().ok_or_else(|| violation(bg.at(key), "type"))?;
        for (k, b) in m {
            regions.insert(k.clone(), parse_box(&format!("{}.{k}", bg.at(key)), b)?);
        }
    }
    let background_composition = BackgroundComposition { scene_type: bg.string_or_default("scene_type")?, regions };

    let vp = top.obj("viewpoint_conditions")?;
    let ldv = match vp.get("light_direction_vector") {
        None => [0.0, 0.0],
        Some(Value::Array(a)) if a.len() == 2 => {
            let mut out = [0.0; 2];
            for (i, c) in a.iter().enumerate() {
                let x = c.as_f64().ok_or_else(|| violation(vp.at("light_direction_vector"), "type"))?;
                if !(-1.0..=1.0).contains(&x) {
                    return Err(violation(vp.at("light_direction_vector"), "range"));
                }
                out[i] = x;
            }
            out
        }
        Some(_) => return Err(violation(vp.at("light_direction_vector"), "type")),
    };
    let viewpoint_conditions = ViewpointConditions {
        camera_angle: vp.string_or_default("camera_angle")?,
        camera_elevation: vp.string_or_default("camera_elevation")?,
        lighting: vp.string_or_default("lighting")?,
        light_direction_vector: ldv,
        depth: vp.string_or_default("depth")?,
    };

    let q = top.obj("image_quality")?;
    let image_quality = ImageQuality {
        resolution: parse_resolution(&q.at("resolution"), q.req("resolution")?)?,
        sharpness_score: q.ranged("sharpness_score", 0.0, 1.0)?,
        color_fidelity: q.string_or_default("color_fidelity")?,
        detail_completeness: q.opt_ranged("detail_completeness", 0.0, 100.0)?.unwrap_or(100.0),
        style_consistency: q.string_or_default("style_consistency")?,
        jpeg_artifacts: if q.get("jpeg_artifacts").is_some() { q.boolean("jpeg_artifacts")? } else { false },
    };

    let sa = top.obj("semantic_alignment")?;
    let mut diff = BTreeMap::new();
    if let Some(v) = sa.get("alignment_vector_diff") {
        let m = v.as_object().ok_or_else(|| violation(sa.at("alignment_vector_diff"), "type"))?;
        for (k, x) in m {
            let field = format!("{}.{k}", sa.at("alignment_vector_diff"));
            let x = x.as_f64().ok_or_else(|| violation(field.clone(), "type"))?;
            if x < 0.0 {
                return Err(violation(field, "range"));
            }
            diff.insert(k.clone(), x);
        }
    }
    let semantic_alignment = SemanticAlignment {
        class_prototype: sa.string_or_default("class_prototype")?,
        similarity_score: sa.ranged("similarity_score", 0.0, 1.0)?,
        match_features: sa.strings("match_features")?,
        alignment_vector_diff: diff,
    };

    let r = top.obj("quality_risks")?;
    let noise_level = match r.get("noise_level") {
        None => NoiseLevel::Low,
        Some(v) => match v.as_str().map(|s| s.trim().to_ascii_lowercase()).as_deref() {
            Some("low") => NoiseLevel::Low,
            Some("medium") | Some("moderate") => NoiseLevel::Medium,
            Some("high") => NoiseLevel::High,
            _ => return Err(violation(r.at("noise_level"), "enum")),
        },
    };
    let quality_risks = QualityRisks {
        occlusion_detected: if r.get("occlusion_detected").is_some() { r.boolean("occlusion_detected")? } else { false },
        occlusion_level: r.opt_ranged("occlusion_level", 0.0, 1.0)?,
        blur_score: r.opt_ranged("blur_score", 0.0, 1.0)?.unwrap_or(0.0),
        exposure_abnormality: if r.get("exposure_abnormality").is_some() { r.boolean("exposure_abnormality")? } else { false },
        viewpoint_deviation_score: r.opt_ranged("viewpoint_deviation_score", 0.0, 1.0)?.unwrap_or(0.0),
        noise_level,
        warnings: r.strings("warnings")?,
        total_risk_score: r.opt_ranged("total_risk_score", 0.0, 1.0)?,
    };

    let d = top.obj("decision")?;
    let decision = AnalysisDecision {
        qualified: d.boolean("qualified")?,
        confidence: d.ranged("confidence", 0.0, 1.0)?,
        reason: d.string_or_default("reason")?,
    };

    let instance_count = match top.get("instance_count") {
        None => 1,
        Some(v) => v.as_u64().filter(|&n| n <= u32::MAX as u64).ok_or_else(|| violation("instance_count", "type"))? as u32,
    };

    let extras = map
        .iter()
        .filter(|(k, _)| !KNOWN_TOP.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();

    let target_category = top.string("target_category")?;
    if target_category.trim().is_empty() {
        return Err(violation("target_category", "non-empty"));
    }

    Ok(ImageAnalysis {
        image_id: top.string_or_default("image_id")?,
        target_category,
        instance_count,
        fine_grained_attributes: attrs,
        background_composition,
        viewpoint_conditions,
        image_quality,
        semantic_alignment,
        quality_risks,
        decision,
        extras,
    })
}

/// The JSON object spanning the first `{` to the last `}` of `text`.
pub fn extract_json(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}

impl ImageAnalysis {
    /// Canonical document form.
    pub fn to_value(&self) -> Value {
        let attrs: Map<String, Value> = self
            .fine_grained_attributes
            .iter()
            .map(|(k, a)| (k.clone(), json!({"value": a.value, "region": a.region})))
            .collect();
        let regions: Map<String, Value> =
            self.background_composition.regions.iter().map(|(k, b)| (k.clone(), json!(b))).collect();
        let q = &self.image_quality;
        let r = &self.quality_risks;
        let mut doc = json!({
            "image_id": self.image_id,
            "target_category": self.target_category,
            "instance_count": self.instance_count,
            "fine_grained_attributes": attrs,
            "background_composition": {
                "scene_type": self.background_composition.scene_type,
                "background_distribution": regions,
            },
            "viewpoint_conditions": self.viewpoint_conditions,
            "image_quality": {
                "resolution": format!("{}x{}", q.resolution.0, q.resolution.1),
                "sharpness_score": q.sharpness_score,
                "color_fidelity": q.color_fidelity,
                "detail_completeness": q.detail_completeness,
                "style_consistency": q.style_consistency,
                "jpeg_artifacts": q.jpeg_artifacts,
            },
            "semantic_alignment": self.semantic_alignment,
            "quality_risks": {
                "occlusion_detected": r.occlusion_detected,
                "occlusion_level": r.occlusion_level,
                "blur_score": r.blur_score,
                "exposure_abnormality": r.exposure_abnormality,
                "viewpoint_deviation_score": r.viewpoint_deviation_score,
                "noise_level": r.noise_level,
                "warnings": r.warnings,
                "total_risk_score": r.total_risk_score,
            },
            "decision": self.decision,
        });
        let obj = doc.as_object_mut().expect("object literal");
        for (k, v) in &self.extras {
            obj.insert(k.clone(), v.clone());
        }
        doc
    }

    /// Regions attached to fine-grained attributes, in key order.
    pub fn object_regions(&self) -> Vec<NormalizedBox> {
        self.fine_grained_attributes.values().filter_map(|a| a.region).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> Value {
        json!({
            "target_category": "cat",
            "background_composition": {"scene_type": "room"},
            "viewpoint_conditions": {},
            "image_quality": {"resolution": "64x48", "sharpness_score": 0.8},
            "semantic_alignment": {"similarity_score": 0.9},
            "quality_risks": {},
            "decision": {"qualified": true, "confidence": 0.9}
        })
    }

    #[test]
    fn minimal_document_parses() {
        let a = parse_analysis(&minimal()).unwrap();
        assert_eq!(a.image_quality.resolution, (64, 48));
        assert_eq!(a.instance_count, 1);
        assert_eq!(a.quality_risks.total_risk_score, None);
    }

    #[test]
    fn empty_and_non_object() {
        assert_eq!(parse_analysis(&json!({})).unwrap_err(), AnalysisError::NotADocument);
        assert_eq!(parse_analysis(&json!([1, 2])).unwrap_err(), AnalysisError::NotADocument);
        assert_eq!(parse_analysis(&json!("no json here")).unwrap_err(), AnalysisError::NotADocument);
    }

    #[test]
    fn inverted_box_names_the_field() {
        let mut doc = minimal();
        doc["fine_grained_attributes"] = json!({"pose_bounding_box": [0.5, 0.5, 0.4, 0.6]});
        assert_eq!(
            parse_analysis(&doc).unwrap_err(),
            AnalysisError::SchemaViolation { field: "fine_grained_attributes.pose_bounding_box".into(), rule: "x-order".into() }
        );
    }

    #[test]
    fn range_and_type_errors() {
        let mut doc = minimal();
        doc["semantic_alignment"]["similarity_score"] = json!(1.2);
        assert_eq!(
            parse_analysis(&doc).unwrap_err(),
            AnalysisError::SchemaViolation { field: "semantic_alignment.similarity_score".into(), rule: "range".into() }
        );
        let mut doc = minimal();
        doc["image_quality"]["resolution"] = json!("big");
        assert!(matches!(parse_analysis(&doc).unwrap_err(), AnalysisError::SchemaViolation { rule, .. } if rule == "format"));
        let mut doc = minimal();
        doc.as_object_mut().unwrap().remove("decision");
        assert!(matches!(parse_analysis(&doc).unwrap_err(), AnalysisError::SchemaViolation { field, .. } if field == "decision"));
    }

    #[test]
    fn wrapped_string_is_unwrapped() {
        let s = format!("Here you go:\n```json\n{}\n```", minimal());
        assert_eq!(parse_analysis(&Value::String(s)).unwrap(), parse_analysis(&minimal()).unwrap());
    }

    #[test]
    fn extras_survive_roundtrip() {
        let mut doc = minimal();
        doc["model_notes"] = json!({"k": [1, 2]});
        let a = parse_analysis(&doc).unwrap();
        assert_eq!(a.extras["model_notes"], json!({"k": [1, 2]}));
        assert_eq!(parse_analysis(&a.to_value()).unwrap(), a);
    }

    #[test]
    fn nested_attribute_region_is_lifted() {
        let mut doc = minimal();
        doc["fine_grained_attributes"] = json!({
            "tail_detail": {"appearance": "fluffy", "tail_region": [0.3, 0.55, 0.6, 0.72]},
            "pose": "sitting"
        });
        let a = parse_analysis(&doc).unwrap();
        let tail = &a.fine_grained_attributes["tail_detail"];
        assert_eq!(tail.region.unwrap().to_array(), [0.3, 0.55, 0.6, 0.72]);
        assert_eq!(tail.value, json!({"appearance": "fluffy"}));
        assert_eq!(a.fine_grained_attributes["pose"].region, None);
        assert_eq!(parse_analysis(&a.to_value()).unwrap(), a);
    }

    #[test]
    fn sibling_region_keys_fold_onto_their_attribute() {
        let mut doc = minimal();
        doc["fine_grained_attributes"] = json!({
            "pose": "crouching",
            "pose_bounding_box": [0.22, 0.35, 0.75, 0.65],
            "fur_detail": "winter coat",
            "fur_region": [0.25, 0.4, 0.7, 0.6],
            "orphan_box": [0.1, 0.1, 0.2, 0.2]
        });
        let a = parse_analysis(&doc).unwrap();
        let f = &a.fine_grained_attributes;
        assert_eq!(f.len(), 3);
        assert_eq!(f["pose"].value, json!("crouching"));
        assert_eq!(f["pose"].region.unwrap().to_array(), [0.22, 0.35, 0.75, 0.65]);
        assert_eq!(f["fur_detail"].region.unwrap().to_array(), [0.25, 0.4, 0.7, 0.6]);
        assert!(f["orphan_box"].value.is_null());
        assert_eq!(parse_analysis(&a.to_value()).unwrap(), a);
    }
}
