//! Model file: JSON with the weight block as base64 little-endian f32.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{LinearModel, SvmError, TrainingInfo};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub positive_label: String,
    pub bias: f64,
    pub c_value: f64,
    pub dim: usize,
    pub backend_id: String,
    pub created_at: String,
    pub weights: String,
    #[serde(default)]
    pub training: TrainingInfo,
}

impl From<LinearModel> for ModelFile {
    fn from(m: LinearModel) -> Self {
        let bytes: Vec<u8> = m.weights.iter().flat_map(|w| w.to_le_bytes()).collect();
        ModelFile {
            positive_label: m.positive_label,
            bias: m.bias,
            c_value: m.c_value,
            dim: m.dim,
            backend_id: m.backend_id,
            created_at: m.created_at,
            weights: STANDARD.encode(bytes),
            training: m.training,
        }
    }
}

impl TryFrom<ModelFile> for LinearModel {
    type Error = SvmError;

    fn try_from(f: ModelFile) -> Result<Self, Self::Error> {
        let bytes = STANDARD
            .decode(f.weights.as_bytes())
            .map_err(|e| SvmError::ModelFormat(format!("weights are not base64: {e}")))?;
        if bytes.len() != f.dim * 4 {
            return Err(SvmError::ModelFormat(format!(
                "weight block holds {} bytes, dim {} needs {}",
                bytes.len(),
                f.dim,
                f.dim * 4
            )));
        }
        let weights: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if weights.iter().any(|w| !w.is_finite()) || !f.bias.is_finite() {
            return Err(SvmError::ModelFormat("non-finite weight".into()));
        }
        Ok(LinearModel {
            positive_label: f.positive_label,
            weights,
            bias: f.bias,
            c_value: f.c_value,
            dim: f.dim,
            backend_id: f.backend_id,
            created_at: f.created_at,
            training: f.training,
        })
    }
}

pub fn write_model_json(model: &LinearModel, path: &Path) -> Result<(), SvmError> {
    let text = serde_json::to_string_pretty(model).map_err(|e| SvmError::ModelFormat(e.to_string()))?;
    fs::write(path, text).map_err(|e| SvmError::ModelFormat(format!("{}: {e}", path.display())))
}

pub fn read_model_json(path: &Path) -> Result<LinearModel, SvmError> {
    let text = fs::read_to_string(path).map_err(|e| SvmError::ModelFormat(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| SvmError::ModelFormat(e.to_string()))
}
