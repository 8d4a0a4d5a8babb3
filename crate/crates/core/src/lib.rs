//! Experiment engine for measuring how recommendation calibration responds
//! to the temporal extent of each user's training history.
//!
//! The pipeline: ingest raw interaction logs into a canonical dataset,
//! slice every profile into fixed time windows, build cumulative samples
//! from the most recent window outward, train a ranking model per sample,
//! and measure per-user miscalibration (KL divergence between profile and
//! recommendation category distributions) and NDCG@10, globally and per
//! user segment.
//!
//! All numeric code is generic over the [`scalar::Real`] scalar; the
//! aliases below fix the two supported precisions.

pub mod error;
pub mod experiment;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod recommend;
pub mod report;
pub mod scalar;
pub mod segment;
pub mod synthetic;
pub mod timeutil;
pub mod window;

pub use error::{Error, Result};
pub use scalar::Real;

/// Default scalar for end-to-end runs.
pub type Scalar = f64;

pub type Dataset32 = model::Dataset<f32>;
pub type Dataset64 = model::Dataset<f64>;
pub type CategoryDistribution32 = model::CategoryDistribution<f32>;
pub type CategoryDistribution64 = model::CategoryDistribution<f64>;
pub type BprModel32 = recommend::BprModel<f32>;
pub type BprModel64 = recommend::BprModel<f64>;
pub type ExperimentConfig64 = experiment::ExperimentConfig<f64>;
pub type ExperimentResult64 = experiment::ExperimentResult<f64>;
