//! Learning per-location distributions of ground-level object counts from
//! overhead imagery.
//!
//! Ground-level detections are tallied into per-category histograms, paired
//! with the overhead tile covering the same location, and used as weak
//! supervision for a small network whose heads emit the parameters of a
//! Poisson, negative-binomial, or Gaussian distribution per category. The
//! trained model drives expected-count heatmaps, top-k tile retrieval, and
//! k-means clustering of the predicted parameters.
//!
//! Module map:
//! - [`counts`]: histograms, tiles, dataset I/O, splits, synthetic data, stats.
//! - [`dists`]: likelihoods and analytic gradients for the three families.
//! - [`net`]: the network with hand-written forward and backward passes.
//! - [`optim`]: Nesterov-accelerated Adam.
//! - [`trainer`]: training loop, held-out evaluation, checkpoints.
//! - [`geomap`]: baseline and model maps, retrieval, clustering, rendering.

pub mod counts;
pub mod dists;
pub mod error;
pub mod geo;
pub mod geomap;
pub mod gradcheck;
pub mod net;
pub mod optim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
