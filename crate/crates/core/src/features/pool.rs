use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::FEATURE_DIM;

/// Spatial side of the conv5 output for a 224×224 input.
pub const BLOCK_SIDE: usize = 7;

/// 7×7×2048 conv5 activations, stored position-major: `(row * 7 + col) * 2048 + channel`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBlock {
    values: Vec<f32>,
}

impl ActivationBlock {
    pub const LEN: usize = BLOCK_SIDE * BLOCK_SIDE * FEATURE_DIM;

    pub fn new(values: Vec<f32>) -> Result<Self, FeatureError> {
        if values.len() != Self::LEN {
            return Err(FeatureError::DimensionMismatch {
                expected: Self::LEN,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite("activation block".into()));
        }
        Ok(ActivationBlock { values })
    }

    /// Converts a channel-major `[2048, 7, 7]` buffer (NCHW without the batch axis).
    pub fn from_chw(chw: &[f32]) -> Result<Self, FeatureError> {
        if chw.len() != Self::LEN {
            return Err(FeatureError::DimensionMismatch {
                expected: Self::LEN,
                got: chw.len(),
            });
        }
        let plane = BLOCK_SIDE * BLOCK_SIDE;
        let mut values = vec![0f32; Self::LEN];
        for c in 0..FEATURE_DIM {
            for p in 0..plane {
                values[p * FEATURE_DIM + c] = chw[c * plane + p];
            }
        }
        Self::new(values)
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.values[(row * BLOCK_SIDE + col) * FEATURE_DIM + channel]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Max,
    /// Kept for ablations against the usual global-average head.
    Average,
}

/// Channel-wise maximum over the 49 spatial positions.
pub fn global_max_pool(block: &ActivationBlock) -> Vec<f32> {
    pool(block, Pooling::Max)
}

pub fn pool(block: &ActivationBlock, mode: Pooling) -> Vec<f32> {
    let positions = block.values.chunks_exact(FEATURE_DIM);
    match mode {
        Pooling::Max => {
            let mut out = vec![f32::NEG_INFINITY; FEATURE_DIM];
            for pos in positions {
                for (o, &v) in out.iter_mut().zip(pos) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
            out
        }
        Pooling::Average => {
            let mut acc = vec![0f64; FEATURE_DIM];
            for pos in positions {
                for (a, &v) in acc.iter_mut().zip(pos) {
                    *a += f64::from(v);
                }
            }
            let n = (BLOCK_SIDE * BLOCK_SIDE) as f64;
            acc.into_iter().map(|a| (a / n) as f32).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_block_pools_to_zero() {
        let b = ActivationBlock::new(vec![0.0; ActivationBlock::LEN]).unwrap();
        assert!(global_max_pool(&b).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_support() {
        let mut v = vec![0.0; ActivationBlock::LEN];
        v[(3 * BLOCK_SIDE + 3) * FEATURE_DIM + 7] = 5.0;
        let out = global_max_pool(&ActivationBlock::new(v).unwrap());
        assert_eq!(out.len(), FEATURE_DIM);
        assert_eq!(out[7], 5.0);
        assert_eq!(out.iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn negative_activations_and_average() {
        let mut v = vec![-1.0; ActivationBlock::LEN];
        v[FEATURE_DIM] = -0.5;
        let b = ActivationBlock::new(v).unwrap();
        assert_eq!(global_max_pool(&b)[0], -0.5);
        let avg = pool(&b, Pooling::Average);
        assert!((avg[0] - (-48.5 / 49.0)).abs() < 1e-6);
        assert_eq!(avg[1], -1.0);
    }

    #[test]
    fn chw_conversion() {
        let chw: Vec<f32> = (0..ActivationBlock::LEN).map(|i| i as f32).collect();
        let b = ActivationBlock::from_chw(&chw).unwrap();
        assert_eq!(b.get(2, 5, 9), chw[9 * 49 + 2 * 7 + 5]);
        assert!(ActivationBlock::new(vec![0.0; 10]).is_err());
    }
}
