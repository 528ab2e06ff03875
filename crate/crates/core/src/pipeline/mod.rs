//! The end-to-end run: a supervisor drives acquisition windows through
//! analyze, optimize and label worker pools, commits accepted images through
//! the staged protocol, and finalizes the dataset with its metric report.

pub mod config;
pub mod dataset;
mod finalize;
pub mod item;
mod runner;
pub mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::acquisition::AcquisitionError;
use crate::intake::IntakeError;
use crate::metrics::MetricError;
use crate::supervision::SupervisionError;

pub use config::RunConfig;
pub use dataset::{class_counts, dataset_report, metadata_jsonl, read_metadata, report_inputs, scan_entries, EntrySet, METADATA_FILE};
pub use item::{process_item, ImageEntry, InstanceInfo, ItemContext, ItemOutcome, ItemRecord};
pub use runner::{read_meta, resume_run, run_report, start_run, RunMeta, RunOptions, RunSummary, OUT_DIR, RUN_LOG, RUN_META};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Intake(#[from] IntakeError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Supervision(#[from] SupervisionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("run aborted: {0}")]
    Aborted(String),
    #[error("interrupted; workspace checkpointed for resume")]
    Interrupted,
    #[error("workspace {0} already holds a run; resume it or pick another workspace")]
    WorkspaceInUse(PathBuf),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
