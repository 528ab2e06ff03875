//! Run configuration, read from a TOML document. Every key is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::dataset_spec::DatasetSpec;
use crate::gateway::{HttpConfig, RetryPolicy};
use crate::labeling::LabelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub workspace: Option<PathBuf>,
    /// Image source: a directory tree or a manifest of paths and URLs.
    pub corpus: Option<PathBuf>,
    /// Worker budget shared by the analyze, optimize and label stages.
    pub workers: usize,
    pub seed: u64,
    /// Records fetched per supervisor window.
    pub window: usize,
    /// Commits between periodic checkpoints.
    pub checkpoint_every: u64,
    pub checkpoint_secs: u64,
    pub overcollect_factor: f64,
    pub min_alignment_score: Option<f64>,
    pub max_risk_score: Option<f64>,
    pub min_confidence: Option<f64>,
    pub min_resolution: Option<(u32, u32)>,
    pub label: LabelConfig,
    /// Ask the text backend for a tool plan instead of the rule planner.
    pub backend_tool_plan: bool,
    /// Adds seeded Gaussian noise to every accepted image when set.
    pub noise_sigma: Option<f64>,
    /// Images sampled into the manual label inspection manifest.
    pub alr_sample: usize,
    pub retry: RetryPolicy,
    pub backends: HttpConfig,
    pub prompts_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workspace: None,
            corpus: None,
            workers: 4,
            seed: 0,
            window: 32,
            checkpoint_every: 64,
            checkpoint_secs: 30,
            overcollect_factor: 1.2,
            min_alignment_score: None,
            max_risk_score: None,
            min_confidence: None,
            min_resolution: None,
            label: LabelConfig::default(),
            backend_tool_plan: false,
            noise_sigma: None,
            alr_sample: 100,
            retry: RetryPolicy::default(),
            backends: HttpConfig::default(),
            prompts_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        if self.workers == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        if self.window == 0 || self.checkpoint_every == 0 {
            return Err(PipelineError::Config("window and checkpoint_every must be at least 1".into()));
        }
        if self.overcollect_factor.is_nan() || self.overcollect_factor < 1.0 {
            return Err(PipelineError::Config("overcollect_factor must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies threshold overrides to the spec's constraints.
    pub fn apply_thresholds(&self, spec: &mut DatasetSpec) {
        let q = &mut spec.quality_constraints;
        if let Some(v) = self.min_alignment_score {
            q.min_alignment_score = v;
        }
        if let Some(v) = self.max_risk_score {
            q.max_risk_score = v;
        }
        if let Some(v) = self.min_confidence {
            q.min_confidence = v;
        }
        if let Some(v) = self.min_resolution {
            q.min_resolution = v;
        }
    }

    /// Label settings with the spec's confidence floor.
    pub fn label_config(&self, spec: &DatasetSpec) -> LabelConfig {
        LabelConfig { min_confidence: spec.quality_constraints.min_confidence, ..self.label.clone() }
    }
}
