//! Pre-trained 50-layer residual network run through an ONNX graph.
//!
//! The graph must map a `1×3×224×224` float input to the conv5 activations
//! (`1×2048×7×7`). For a full classification export, name the conv5 node with
//! `ResidualConfig::output_node` and the graph is truncated there.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tract_onnx::prelude::*;

use super::{patch_key, pool, ActivationBlock, BackendDescriptor, FeatureBackend, FeatureError, FeatureVector, Pooling};
use crate::preprocess::Patch;
use crate::{FEATURE_DIM, PATCH_SIZE};

/// torchvision ImageNet statistics (RGB order), applied to [0, 1] intensities.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualConfig {
    pub model_path: PathBuf,
    /// Graph node whose first output holds the conv5 activations.
    pub output_node: Option<String>,
    pub pooling: Pooling,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl ResidualConfig {
    pub fn new(model_path: impl Into<PathBuf>) -> Self {
        ResidualConfig {
            model_path: model_path.into(),
            output_node: None,
            pooling: Pooling::Max,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

type Runnable = std::sync::Arc<TypedSimplePlan>;

pub struct ResidualBackend {
    config: ResidualConfig,
    model: Runnable,
    descriptor: BackendDescriptor,
}

impl std::fmt::Debug for ResidualBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResidualBackend").field("descriptor", &self.descriptor).finish()
    }
}

fn unavailable(path: &Path, e: impl std::fmt::Display) -> FeatureError {
    FeatureError::BackendUnavailable(format!("{}: {e}", path.display()))
}

impl ResidualBackend {
    pub fn load(config: ResidualConfig) -> Result<Self, FeatureError> {
        let path = config.model_path.clone();
        let bytes = fs::read(&path).map_err(|e| unavailable(&path, e))?;
        let digest = hex(&Sha256::digest(&bytes));
        let mut model = tract_onnx::onnx()
            .model_for_read(&mut bytes.as_slice())
            .map_err(|e| unavailable(&path, e))?
            .with_input_fact(0, f32::fact([1, 3, PATCH_SIZE, PATCH_SIZE]).into())
            .map_err(|e| unavailable(&path, e))?;
        if let Some(name) = &config.output_node {
            let id = model.node_by_name(name).map_err(|e| unavailable(&path, e))?.id;
            model
                .select_output_outlets(&[OutletId::new(id, 0)])
                .map_err(|e| unavailable(&path, e))?;
        }
        let model = model
            .into_optimized()
            .and_then(|m| m.into_runnable())
            .map_err(|e| unavailable(&path, e))?;
        let pooling = match config.pooling {
            Pooling::Max => "max",
            Pooling::Average => "average",
        };
        let descriptor = BackendDescriptor {
            backend_id: format!("resnet50-conv5-{pooling}-{}", &digest[..16]),
            kind: "residual".into(),
            params: BTreeMap::from([
                ("model_sha256".to_string(), digest),
                ("input".to_string(), "RGB NCHW 1x3x224x224 f32".to_string()),
                ("mean".to_string(), format!("{:?}", config.mean)),
                ("std".to_string(), format!("{:?}", config.std)),
                ("output_node".to_string(), config.output_node.clone().unwrap_or_else(|| "graph output 0".into())),
                ("pooling".to_string(), pooling.to_string()),
            ]),
        };
        Ok(ResidualBackend { config, model, descriptor })
    }

    /// Runs the graph and returns the conv5 activations for one patch.
    pub fn activations(&self, patch: &Patch) -> Result<ActivationBlock, FeatureError> {
        let plane = PATCH_SIZE * PATCH_SIZE;
        let mut input = patch.pixels().to_vec();
        for (c, chunk) in input.chunks_exact_mut(plane).enumerate() {
            for v in chunk {
                *v = (*v - self.config.mean[c]) / self.config.std[c];
            }
        }
        let tensor = Tensor::from_shape(&[1, 3, PATCH_SIZE, PATCH_SIZE], &input).map_err(|e| FeatureError::InferenceFailure(e.to_string()))?;
        let outputs = self
            .model
            .run(tvec!(tensor.into()))
            .map_err(|e| FeatureError::InferenceFailure(e.to_string()))?;
        let out = outputs
            .first()
            .ok_or_else(|| FeatureError::InferenceFailure("graph produced no output".into()))?;
        let shape = out.shape().to_vec();
        if shape != [1, FEATURE_DIM, 7, 7] {
            return Err(FeatureError::InferenceFailure(format!(
                "expected conv5 output [1, {FEATURE_DIM}, 7, 7], got {shape:?}"
            )));
        }
        let view = out
            .to_plain_array_view::<f32>()
            .map_err(|e| FeatureError::InferenceFailure(e.to_string()))?;
        let chw: Vec<f32> = view.iter().copied().collect();
        ActivationBlock::from_chw(&chw).map_err(|e| FeatureError::InferenceFailure(e.to_string()))
    }
}

impl FeatureBackend for ResidualBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn extract(&self, patch: &Patch) -> Result<FeatureVector, FeatureError> {
        let block = self.activations(patch)?;
        FeatureVector::new(pool(&block, self.config.pooling), &self.descriptor.backend_id, patch_key(patch))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
