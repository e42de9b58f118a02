//! Pipeline driver: configuration, stage execution with a hashed artifact
//! manifest, evaluation reports and figure export.

pub mod config;
pub mod export;
pub mod pipeline;

pub use config::PipelineConfig;
pub use pipeline::{run_pipeline, Manifest, PipelineError, Stage};
