//! Core library for studying how visual highlights steer attention on a
//! multi-drone monitoring display.
//!
//! The crate covers the whole desk-scale pipeline short of model training:
//! layout geometry, seeded scenario simulation, synthetic gaze, fixation
//! detection and behavioral metrics, saliency rasters and normalized element
//! saliency, map-level evaluation metrics, a bottom-up ITTI baseline,
//! schematic frame rendering and the hypothesis tests used in the analysis.

pub mod dronesim;
pub mod gazegen;
pub mod gazeproc;
pub mod itti;
pub mod layout;
pub mod metrics;
pub mod render;
pub mod rng;
pub mod saliency;
pub mod stats;
pub mod study;
pub mod timegrid;

pub use layout::{BBox, Element, IconKind, Layout, LayoutError};
pub use timegrid::TimeGrid;
