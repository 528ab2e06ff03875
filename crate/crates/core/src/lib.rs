//! Agentic dataset construction: demand intake, acquisition, per-image
//! analysis, preprocessing tools, labeling, supervision and quality metrics.

pub mod acquisition;
pub mod analysis;
pub mod dataset_spec;
pub mod gateway;
pub mod geometry;
pub mod image;
pub mod intake;
pub mod labeling;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod raster;
pub mod supervision;
pub mod tools;
pub mod violation;
