//! HISM-lite: predicts the normalized saliency of a targeted display element
//! over time from a stacked frame-plus-mask raster and the element's recent
//! highlight and state history.
//!
//! Everything trains from scratch on CPU. Differentiation is done by the
//! small tape in [`autodiff`]; [`gradcheck`] verifies it against finite
//! differences.

use thiserror::Error;

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod gradcheck;
pub mod inputs;
pub mod model;
pub mod train;

pub use dataset::{build_dataset, predict_series, split_trials, Dataset, Split};
pub use gradcheck::{grad_check, GradCheckReport};
pub use inputs::{stack_input, temporal_inputs, StackedInput, TemporalInput};
pub use model::{HismModel, Item, Mode, ModelConfig, Variant};
pub use train::{train, TrainConfig, TrainResult};

#[derive(Debug, Error)]
pub enum HismError {
    #[error("element {0} not in layout")]
    UnknownElement(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("query time {0} ms outside the event window")]
    OutsideWindow(i64),
    #[error("slice at {0} ms lies outside the recorded trace")]
    OutsideCoverage(f64),
    #[error("unknown temporal variant {0:?}")]
    UnknownVariant(String),
    #[error("split fractions {0:?} must be non-negative and sum to 1")]
    BadSplit([f64; 3]),
    #[error("empty {0} partition")]
    EmptySplit(&'static str),
    #[error("task {0} has no interval {1}")]
    MissingInterval(u32, usize),
    #[error("need {want} events with highlighted={highlighted}, found {have}")]
    NotEnoughEvents { highlighted: bool, want: usize, have: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
