//! L2-regularised hinge-loss linear SVM.
//!
//! The bias is learned as the weight of an appended constant-1 feature, so the
//! dual has box constraints only (`0 ≤ αᵢ ≤ Cᵢ`) and no equality constraint.

mod cv;
mod model_io;
mod multiclass;
mod solver;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cv::{cross_validate, cross_validate_binary, stratified_folds, CvReport, CvScore};
pub use model_io::{read_model_json, write_model_json};
pub use multiclass::{predict_multiclass, train_one_vs_all};
pub use solver::{train_binary, train_binary_traced, TrainTrace};

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("training labels contain a single class")]
    SingleClassInput,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sample {0} has a non-finite feature")]
    NonFiniteFeature(usize),
    #[error("{samples} samples and {labels} labels")]
    LengthMismatch { samples: usize, labels: usize },
    #[error("label {0} is not +1 or -1")]
    InvalidLabel(i8),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("not enough samples for {folds}-fold cross-validation: {reason}")]
    InsufficientSamplesForFolds { folds: usize, reason: String },
    #[error("no models to predict with")]
    EmptyModelList,
    #[error("model file: {0}")]
    ModelFormat(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassWeighting {
    #[default]
    None,
    /// Scales each sample's C by `n / (2 · n_class)`.
    InverseFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub c_grid: Vec<f64>,
    pub folds: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub class_weighting: ClassWeighting,
    pub shrinking: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c_grid: vec![0.01, 0.1, 1.0, 10.0],
            folds: 3,
            tolerance: 1e-4,
            max_iterations: 1000,
            seed: 0,
            class_weighting: ClassWeighting::None,
            shrinking: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SvmError> {
        if self.c_grid.is_empty() {
            return Err(SvmError::InvalidConfig("c_grid is empty".into()));
        }
        if let Some(c) = self.c_grid.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(SvmError::InvalidConfig(format!("C = {c} is not positive")));
        }
        if self.folds < 2 {
            return Err(SvmError::InvalidConfig("folds must be at least 2".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(SvmError::InvalidConfig("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(SvmError::InvalidConfig("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Solver bookkeeping carried with each model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub iterations: usize,
    /// Final projected-gradient gap (max − min over active variables).
    pub max_violation: f64,
    pub converged: bool,
    pub support_vectors: usize,
    /// Fewer than two positive samples.
    pub low_support: bool,
}

/// One binary decision `w·x + b`; positive side is `positive_label`.
///
/// Serialises through the model-file schema (weights as base64 little-endian f32).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "model_io::ModelFile", into = "model_io::ModelFile")]
pub struct LinearModel {
    pub positive_label: String,
    pub weights: Vec<f32>,
    pub bias: f64,
    pub c_value: f64,
    pub dim: usize,
    pub backend_id: String,
    pub created_at: String,
    pub training: TrainingInfo,
}

impl LinearModel {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.positive_label = label.into();
        self
    }

    pub fn with_backend(mut self, backend_id: impl Into<String>) -> Self {
        self.backend_id = backend_id.into();
        self
    }
}

/// `w·x + b`, accumulated in f64.
pub fn decision_value(model: &LinearModel, x: &[f32]) -> Result<f64, SvmError> {
    if x.len() != model.weights.len() {
        return Err(SvmError::DimensionMismatch {
            expected: model.weights.len(),
            got: x.len(),
        });
    }
    Ok(model
        .weights
        .iter()
        .zip(x)
        .map(|(&w, &v)| f64::from(w) * f64::from(v))
        .sum::<f64>()
        + model.bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(weights: Vec<f32>, bias: f64) -> LinearModel {
        LinearModel {
            positive_label: "p".into(),
            dim: weights.len(),
            weights,
            bias,
            c_value: 1.0,
            backend_id: String::new(),
            created_at: String::new(),
            training: TrainingInfo::default(),
        }
    }

    #[test]
    fn decision_values() {
        assert_eq!(decision_value(&model(vec![0.0; 3], 0.0), &[4.0, -2.0, 9.0]).unwrap(), 0.0);
        assert_eq!(decision_value(&model(vec![1.0, 0.0, 0.0], 1.0), &[2.0, 0.0, 0.0]).unwrap(), 3.0);
        assert!(matches!(
            decision_value(&model(vec![1.0], 0.0), &[1.0, 2.0]),
            Err(SvmError::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.c_grid = vec![];
        assert!(c.validate().is_err());
        c.c_grid = vec![-1.0];
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.folds = 1;
        assert!(c.validate().is_err());
    }
}
