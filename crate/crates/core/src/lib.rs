//! Placement evaluation and optimization for distributed antenna sub-arrays
//! on a vehicle, for near-field downlink positioning from a single base
//! station.
//!
//! The crate computes Cramér-Rao position error bounds (PEB) over sampled
//! vehicle poses, accounting for self-occlusion by the vehicle body and a
//! specular ground reflection, ranks deployments on a grid of mounting
//! points by a PEB percentile, and scans compressed maximum-likelihood
//! objectives around the true position.

pub mod channel;
pub mod cli;
pub mod config;
pub mod deployment;
pub mod error;
pub mod fim;
pub mod geometry;
pub mod likelihood;
pub mod linalg;
pub mod metric;
pub mod optimizer;
pub mod scenario;

pub use error::{Error, Result};
