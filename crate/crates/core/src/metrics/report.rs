//! Metric report assembly and rendering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kernels::{self, occlusion_severity, OcclusionSeverity, FEATURE_EXTRACTOR_ID};
use super::MetricError;
use crate::dataset_spec::TaskType;

pub const CLASSIFICATION_COLUMNS: [&str; 6] = ["CBI", "SSIM", "ALR", "DSE", "SDI", "DDC"];
pub const DETECTION_COLUMNS: [&str; 9] = ["CBI", "SSIM", "ALR", "DSE", "SDI", "DDC", "IDDE", "BQI", "OSR"];
pub const SEGMENTATION_COLUMNS: [&str; 9] = ["CBI", "SSIM", "ALR", "DSE", "SDI", "DDC", "ESI", "ACS", "PCB"];

pub fn columns_for(task: TaskType) -> &'static [&'static str] {
    match task {
        TaskType::Classification => &CLASSIFICATION_COLUMNS,
        TaskType::Detection => &DETECTION_COLUMNS,
        _ => &SEGMENTATION_COLUMNS,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Below,
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub direction: Direction,
    pub value: f64,
}

/// Published quality bars for the metrics that have one.
pub fn threshold_for(name: &str) -> Option<Threshold> {
    let (direction, value) = match name {
        "CBI" => (Direction::Below, 0.1),
        "SSIM" => (Direction::Above, 0.9),
        "ALR" => (Direction::Above, 0.95),
        "DDC" => (Direction::Below, 0.1),
        "BQI" => (Direction::Above, 0.9),
        "ACS" => (Direction::Above, 0.85),
        "PCB" => (Direction::Above, 0.8),
        _ => return None,
    };
    Some(Threshold { direction, value })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: Option<f64>,
    pub threshold: Option<Threshold>,
    pub pass: Option<bool>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeverityCounts {
    pub none: u64,
    pub slight: u64,
    pub partial: u64,
    pub severe: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub task_type: TaskType,
    pub columns: Vec<String>,
    pub metrics: Vec<MetricValue>,
    pub occlusion_severity: Option<SeverityCounts>,
    pub meta: BTreeMap<String, String>,
}

/// Everything the report needs, gathered from a finished dataset.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub dataset: String,
    pub task_type: Option<TaskType>,
    /// Images (classification) or instances (detection, segmentation) per class.
    pub class_counts: BTreeMap<String, u64>,
    /// Class counts of the dataset before expansion; `None` compares to uniform.
    pub reference_counts: Option<BTreeMap<String, u64>>,
    pub source_counts: BTreeMap<String, u64>,
    /// SSIM of each accepted image against its pre-optimization original.
    pub ssim_values: Vec<f64>,
    pub class_features: BTreeMap<String, Vec<Vec<f64>>>,
    pub alr: Option<f64>,
    pub instance_areas: Vec<u64>,
    pub ious: Option<Vec<f64>>,
    pub occlusion_levels: Vec<f64>,
    pub esi_values: Vec<f64>,
    pub dice_values: Option<Vec<f64>>,
    pub pixel_counts: BTreeMap<String, u64>,
    pub meta: BTreeMap<String, String>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn value(name: &str, r: Result<f64, String>) -> MetricValue {
    let threshold = threshold_for(name);
    match r {
        Ok(v) => MetricValue {
            name: name.into(),
            value: Some(v),
            threshold,
            pass: threshold.map(|t| match t.direction {
                Direction::Below => v < t.value,
                Direction::Above => v > t.value,
            }),
            note: None,
        },
        Err(note) => MetricValue { name: name.into(), value: None, threshold, pass: None, note: Some(note) },
    }
}

fn err(e: MetricError) -> String {
    e.to_string()
}

fn na(what: &str) -> Result<f64, String> {
    Err(format!("n/a: {what}"))
}

fn sdi_by_class(inputs: &ReportInputs) -> Result<f64, String> {
    let mut per_class = Vec::new();
    let mut notes = Vec::new();
    for (class, feats) in &inputs.class_features {
        match kernels::sdi(feats) {
            Ok(v) => per_class.push(v),
            Err(e) => notes.push(format!("{class}: {e}")),
        }
    }
    mean(&per_class).ok_or_else(|| {
        if notes.is_empty() {
            "n/a: no class has two images".into()
        } else {
            notes.join("; ")
        }
    })
}

fn ddc_value(inputs: &ReportInputs) -> Result<f64, String> {
    let names: Vec<&String> = match &inputs.reference_counts {
        Some(r) => r.keys().collect(),
        None => inputs.class_counts.keys().collect(),
    };
    let p: Vec<u64> = names.iter().map(|n| inputs.class_counts.get(*n).copied().unwrap_or(0)).collect();
    let p = kernels::distribution(&p).map_err(err)?;
    let q = match &inputs.reference_counts {
        Some(r) => kernels::distribution(&r.values().copied().collect::<Vec<_>>()).map_err(err)?,
        None => vec![1.0 / names.len() as f64; names.len()],
    };
    kernels::ddc(&p, &q).map_err(err)
}

/// Computes every metric applicable to the task. Individual metric errors
/// become notes on a null value.
pub fn build_report(inputs: &ReportInputs) -> MetricReport {
    let task = inputs.task_type.unwrap_or(TaskType::Classification);
    let counts: Vec<u64> = inputs.class_counts.values().copied().collect();
    let sources: Vec<u64> = inputs.source_counts.values().copied().collect();
    let mut metrics = vec![
        value("CBI", kernels::cbi(&counts).map_err(err)),
        value("SSIM", mean(&inputs.ssim_values).ok_or_else(|| "n/a: no optimized image pairs".to_string())),
        value("ALR", inputs.alr.map_or_else(|| na("requires inspector verdicts"), Ok)),
        value("DSE", kernels::dse(&sources).map_err(err)),
        value("SDI", sdi_by_class(inputs)),
        value("DDC", ddc_value(inputs)),
    ];
    let mut severity = None;
    match task {
        TaskType::Classification => {}
        TaskType::Detection => {
            metrics.push(value("IDDE", kernels::idde(&inputs.instance_areas).map_err(err)));
            metrics.push(value(
                "BQI",
                match &inputs.ious {
                    Some(v) => kernels::bqi(v).map_err(err),
                    None => na("requires inspector IoU verdicts"),
                },
            ));
            metrics.push(value("OSR", kernels::osr(&inputs.occlusion_levels).map_err(err)));
            let mut s = SeverityCounts::default();
            for &l in &inputs.occlusion_levels {
                match occlusion_severity(l) {
                    OcclusionSeverity::None => s.none += 1,
                    OcclusionSeverity::Slight => s.slight += 1,
                    OcclusionSeverity::Partial => s.partial += 1,
                    OcclusionSeverity::Severe => s.severe += 1,
                }
            }
            severity = Some(s);
        }
        _ => {
            metrics.push(value("ESI", mean(&inputs.esi_values).ok_or_else(|| "n/a: no mask boundaries".to_string())));
            metrics.push(value(
                "ACS",
                match &inputs.dice_values {
                    Some(v) => mean(v).ok_or_else(|| "n/a: no overlapping annotations".to_string()),
                    None => na("requires a second annotation"),
                },
            ));
            let px: Vec<u64> = inputs.pixel_counts.values().copied().collect();
            metrics.push(value("PCB", kernels::pcb(&px).map_err(err)));
        }
    }
    let mut meta = inputs.meta.clone();
    meta.insert("log_base.DSE".into(), "2".into());
    meta.insert("log_base.DDC".into(), "e".into());
    meta.insert("log_base.IDDE".into(), "e".into());
    meta.insert("sdi_extractor".into(), FEATURE_EXTRACTOR_ID.into());
    meta.insert("ssim_reference".into(), "pre-optimization original, same crop, bicubic to output size".into());
    meta.insert(
        "ddc_reference".into(),
        if inputs.reference_counts.is_some() { "original dataset" } else { "uniform" }.into(),
    );
    MetricReport {
        dataset: inputs.dataset.clone(),
        task_type: task,
        columns: columns_for(task).iter().map(|s| s.to_string()).collect(),
        metrics,
        occlusion_severity: severity,
        meta,
    }
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<&MetricValue> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// Aligned text table in column order, followed by notes.
    pub fn to_table(&self) -> String {
        let cells: Vec<String> = self
            .columns
            .iter()
            .map(|c| match self.get(c).and_then(|m| m.value) {
                Some(v) => format!("{v:.3}"),
                None => "n/a".into(),
            })
            .collect();
        let name_w = self.dataset.len().max("Dataset".len());
        let mut header = format!("{:<name_w$}", "Dataset");
        let mut row = format!("{:<name_w$}", self.dataset);
        for (c, v) in self.columns.iter().zip(&cells) {
            let w = c.len().max(v.len());
            header.push_str(&format!("  {c:>w$}"));
            row.push_str(&format!("  {v:>w$}"));
        }
        let mut out = format!("{header}\n{row}\n");
        for m in &self.metrics {
            if let Some(n) = &m.note {
                out.push_str(&format!("{}: {n}\n", m.name));
            } else if let (Some(p), Some(t)) = (m.pass, m.threshold) {
                let op = if t.direction == Direction::Below { "<" } else { ">" };
                out.push_str(&format!("{}: {} (threshold {op} {})\n", m.name, if p { "pass" } else { "fail" }, t.value));
            }
        }
        if let Some(s) = &self.occlusion_severity {
            out.push_str(&format!("occlusion: partial {} severe {}\n", s.partial, s.severe));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(task: TaskType) -> ReportInputs {
        ReportInputs {
            dataset: "toy".into(),
            task_type: Some(task),
            class_counts: [("a", 5), ("b", 5), ("c", 5)].into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            source_counts: [("s1".to_string(), 15)].into(),
            ssim_values: vec![0.95, 0.97],
            ..Default::default()
        }
    }

    #[test]
    fn column_sets() {
        for (t, want) in [
            (TaskType::Classification, &CLASSIFICATION_COLUMNS[..]),
            (TaskType::Detection, &DETECTION_COLUMNS[..]),
            (TaskType::InstanceSeg, &SEGMENTATION_COLUMNS[..]),
        ] {
            let r = build_report(&balanced(t));
            assert_eq!(r.columns, want);
            let names: Vec<&str> = r.metrics.iter().map(|m| m.name.as_str()).collect();
            assert_eq!(names, want);
        }
    }

    #[test]
    fn balanced_build_has_zero_cbi_and_ddc() {
        let r = build_report(&balanced(TaskType::Classification));
        assert_eq!(r.get("CBI").unwrap().value, Some(0.0));
        assert_eq!(r.get("CBI").unwrap().pass, Some(true));
        assert_eq!(r.get("DDC").unwrap().value, Some(0.0));
        assert_eq!(r.get("DSE").unwrap().value, Some(0.0));
        assert!(r.get("ALR").unwrap().value.is_none());
        assert!(r.get("ALR").unwrap().note.as_deref().unwrap().starts_with("n/a"));
        assert!((r.get("SSIM").unwrap().value.unwrap() - 0.96).abs() < 1e-12);
        assert_eq!(r.meta["log_base.DSE"], "2");
    }

    #[test]
    fn expand_with_unchanged_proportions_has_zero_ddc() {
        let mut i = balanced(TaskType::Classification);
        i.reference_counts = Some([("a", 2), ("b", 2), ("c", 2)].into_iter().map(|(k, v)| (k.to_string(), v)).collect());
        assert_eq!(build_report(&i).get("DDC").unwrap().value, Some(0.0));
    }

    #[test]
    fn table_lists_columns_in_order() {
        let t = build_report(&balanced(TaskType::Detection)).to_table();
        let header = t.lines().next().unwrap();
        let cols: Vec<&str> = header.split_whitespace().skip(1).collect();
        assert_eq!(cols, DETECTION_COLUMNS);
    }
}
