//! benthoscan: kelp point classification and coverage analysis for benthic
//! survey imagery.
//!
//! The pipeline stages are:
//!
//! 1. **Ingest**: image and point-label manifests, validation, train/test splits.
//! 2. **Taxonomy**: class hierarchy with descendant and sibling queries.
//! 3. **Preprocess**: per-channel percentile stretch and 224×224 point patches.
//! 4. **Features**: 2048-d residual features (or a hash stub) with a binary cache.
//! 5. **SVM**: linear SVM trained by dual coordinate descent, one-vs-all, k-fold CV.
//! 6. **Hierclass**: flat and local-binary (inclusive / sibling) strategies.
//! 7. **Metrics**: accuracy, per-class precision/recall/f1, paired t-test.
//! 8. **Coverage**: per-image cover, OLS fit with 95% band, site/year aggregation.
//! 9. **Pipeline**: end-to-end orchestration used by the `benthoscan` binary.

pub mod cli;
pub mod coverage;
pub mod error;
pub mod features;
pub mod hierclass;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod svm;
pub mod synth;
pub mod taxonomy;

pub use error::{Error, Result};

/// Spatial size of the square patch cut around every labelled point.
pub const PATCH_SIZE: usize = 224;

/// Dimension of a pooled residual feature vector.
pub const FEATURE_DIM: usize = 2048;
