//! Gene co-expression graph construction from single-cell and spatial
//! count data, weight-sharing graph-transformer training, and an
//! embedding-evaluation harness.
//!
//! The pipeline runs in stages that only talk through on-disk artifacts:
//!
//! 1. [`data`]: count matrices, manifests, QC and a synthetic generator.
//! 2. [`preprocess`]: negative-binomial Pearson residuals, HVG selection,
//!    spatial-variability testing.
//! 3. [`coexpression`]: moment-based IRLS co-expression estimates and the
//!    independence test that decides edges.
//! 4. [`graph`]: per-dataset gene graphs and cross-graph anchor sets.
//! 5. [`model`] and [`training`]: the encoder/decoder and the training loop.
//! 6. [`metrics`]: six embedding-quality metrics, clustering and ranking.

pub mod binio;
pub mod coexpression;
pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod training;

pub use error::{CoreError, ErrorCategory, Result};
