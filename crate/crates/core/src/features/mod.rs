//! 2048-d patch descriptors: pooling of conv5 activations, pluggable
//! extraction backends and the on-disk feature cache.

mod pool;
#[cfg(feature = "onnx")]
mod residual;
mod store;
mod stub;

use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Dataset, SurveyImage};
use crate::preprocess::{color_stretch, extract_patch, Patch, PreprocessError, RgbImage};

pub use pool::{global_max_pool, pool, ActivationBlock, Pooling, BLOCK_SIDE};
#[cfg(feature = "onnx")]
pub use residual::{ResidualBackend, ResidualConfig, IMAGENET_MEAN, IMAGENET_STD};
pub use store::{FeatureStore, StoreKey, STORE_MAGIC, STORE_VERSION};
pub use stub::{StubBackend, DEFAULT_STUB_KEY};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("feature backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("inference failed: {0}")]
    InferenceFailure(String),
    #[error("feature cache {path} is corrupt at byte {offset}: {reason}")]
    CacheCorrupt { path: String, offset: u64, reason: String },
    #[error("feature cache I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("expected {expected}-d features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("image {image_id}: {source}")]
    Preprocess {
        image_id: String,
        #[source]
        source: PreprocessError,
    },
}

/// Which labelled point a feature vector describes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchKey {
    pub image_id: String,
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub backend_id: String,
    pub key: PatchKey,
}

impl FeatureVector {
    pub fn new(values: Vec<f32>, backend_id: impl Into<String>, key: PatchKey) -> Result<Self, FeatureError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(format!("feature vector for {key:?}")));
        }
        Ok(FeatureVector {
            values,
            backend_id: backend_id.into(),
            key,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// How a backend turns a patch into a vector; part of the cache key through
/// `backend_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub kind: String,
    pub params: BTreeMap<String, String>,
}

/// Deterministic patch → vector map.
pub trait FeatureBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn extract(&self, patch: &Patch) -> Result<FeatureVector, FeatureError>;

    fn backend_id(&self) -> &str {
        &self.descriptor().backend_id
    }
}

pub(crate) fn patch_key(patch: &Patch) -> PatchKey {
    PatchKey {
        image_id: patch.source_image_id.clone(),
        x: patch.center.0,
        y: patch.center.1,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheReport {
    pub new_entries: usize,
    pub existing_entries: usize,
    pub images_processed: usize,
}

/// Loads an image from its manifest path.
pub fn load_survey_image(image: &SurveyImage) -> Result<RgbImage, FeatureError> {
    let rgb = RgbImage::load(&image.file_path).map_err(|source| FeatureError::Preprocess {
        image_id: image.image_id.clone(),
        source,
    })?;
    if rgb.width() != image.width_px as usize || rgb.height() != image.height_px as usize {
        return Err(FeatureError::Preprocess {
            image_id: image.image_id.clone(),
            source: PreprocessError::InvalidImage(format!(
                "decoded {}x{}, manifest says {}x{}",
                rgb.width(),
                rgb.height(),
                image.width_px,
                image.height_px
            )),
        });
    }
    Ok(rgb)
}

/// Extracts and stores features for every labelled point missing from the
/// store, reading images from disk.
pub fn cache_features(dataset: &Dataset, backend: &dyn FeatureBackend, cache_path: &Path) -> Result<(FeatureStore, CacheReport), FeatureError> {
    let mut store = FeatureStore::open(cache_path)?;
    let report = cache_features_with(dataset, backend, &mut store, load_survey_image)?;
    Ok((store, report))
}

/// As [`cache_features`], with a caller-supplied image loader. Images are
/// processed in parallel on the current rayon pool; records are appended in
/// manifest order.
pub fn cache_features_with<L>(dataset: &Dataset, backend: &dyn FeatureBackend, store: &mut FeatureStore, loader: L) -> Result<CacheReport, FeatureError>
where
    L: Fn(&SurveyImage) -> Result<RgbImage, FeatureError> + Sync,
{
    let backend_id = backend.backend_id().to_string();
    let mut report = CacheReport::default();
    let mut work: Vec<(&SurveyImage, Vec<usize>)> = Vec::new();
    for (image, label_idx) in dataset.labels_by_image() {
        let mut missing = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for i in label_idx {
            let l = &dataset.labels[i];
            if !seen.insert((l.x_px, l.y_px)) {
                continue;
            }
            if store.contains(&l.image_id, l.x_px, l.y_px, &backend_id) {
                report.existing_entries += 1;
            } else {
                missing.push(i);
            }
        }
        if !missing.is_empty() {
            work.push((image, missing));
        }
    }
    let results: Vec<Result<Vec<FeatureVector>, FeatureError>> = work
        .par_iter()
        .map(|(image, idx)| {
            let raw = loader(image)?;
            let (stretched, _) = color_stretch(&raw);
            idx.iter()
                .map(|&i| {
                    let patch = extract_patch(&stretched, &dataset.labels[i]).map_err(|source| FeatureError::Preprocess {
                        image_id: image.image_id.clone(),
                        source,
                    })?;
                    backend.extract(&patch)
                })
                .collect()
        })
        .collect();
    for vectors in results {
        let vectors = vectors?;
        report.images_processed += 1;
        report.new_entries += vectors.len();
        store.append_batch(&vectors)?;
    }
    info!(
        "feature cache: {} new, {} already present ({} images read)",
        report.new_entries, report.existing_entries, report.images_processed
    );
    Ok(report)
}
