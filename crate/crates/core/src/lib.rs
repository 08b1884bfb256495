//! Piecewise-linear analysis of cumulative view profiles.
//!
//! The crate fits continuous segmented regressions to unit-square cumulative
//! profiles, turns the fits into per-segment angle/length features, clusters
//! the resulting polygonal shapes, and fits four generative models of segment
//! sequences whose fidelity is scored with an L1 histogram distance.

// `!(x > y)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster_analysis;
pub mod error;
pub mod feature_extraction;
pub mod generative_models;
pub mod lstsq;
pub mod model_adherence;
pub mod pipeline;
pub mod profile_ingest;
pub mod seed;
pub mod segmented_regression;

pub use error::{Error, Result};
