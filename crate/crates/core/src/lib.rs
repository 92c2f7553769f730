//! Spatial self-similarity analysis of patch-token feature maps.
//!
//! The crate measures how cosine similarity between the patch tokens of a
//! vision encoder varies with lattice distance ([`similarity`], [`metrics`]),
//! provides transforms that strengthen or weaken that structure
//! ([`transforms`]), and correlates per-encoder metric means against external
//! quality scores ([`analysis`]). [`synthetic`] generates grids with a
//! planted amount of structure for testing.

pub mod analysis;
pub mod error;
pub mod feature_io;
pub mod grid;
pub mod metrics;
pub mod report;
pub mod similarity;
pub mod synthetic;
pub mod transforms;

pub use analysis::{correlate_reports, linfit, pearson, CorrelationResult, LineFit, ScoreSeries};
pub use error::{Error, Result};
pub use grid::{ChannelVector, PatchGrid, SegmentMask};
pub use metrics::{aggregate_metric, MetricConfig, MetricName, MetricReport};
pub use report::RunManifest;
pub use similarity::{correlogram, cosine_kernel, distance_classes, Correlogram};
