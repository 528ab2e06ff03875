//! Dataset quality metrics and the report built from them.

mod alr;
pub mod kernels;
mod report;

use thiserror::Error;

pub use alr::{alr_ingest, alr_manifest, manifest_tsv, parse_verdicts, AlrItem, Verdicts};
pub use kernels::{
    bqi, cbi, ddc, dice, dse, esi, esi_for_mask, histogram_features, idde, occlusion_severity, osr, pcb, scale_bucket,
    sdi, ssim, ssim_luma, OcclusionSeverity, ScaleBucket,
};
pub use report::{
    build_report, columns_for, threshold_for, Direction, MetricReport, MetricValue, ReportInputs, SeverityCounts,
    Threshold, CLASSIFICATION_COLUMNS, DETECTION_COLUMNS, SEGMENTATION_COLUMNS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("image {width}x{height} is smaller than the 11x11 window")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("feature vector {0} has zero norm")]
    DegenerateVector(usize),
    #[error("P has mass where Q is zero at index {0}")]
    UnsupportedSupport(usize),
    #[error("edge set is empty")]
    EmptyEdgeSet,
    #[error("both masks are empty")]
    BothEmpty,
    #[error("sample of {requested} exceeds {available} items")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("verdicts do not match the manifest: {0}")]
    IngestMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
