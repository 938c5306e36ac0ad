//! Hash-based stand-in for the residual network.
//!
//! The vector is a keyed SHA-256 expansion of the patch bytes: identical
//! patches give bitwise-identical vectors, and nothing else is promised. Two
//! patches that differ in one bit are unrelated, so tests never rely on
//! similar patches having similar features.
//!
//! Construction: `seed = SHA256("benthoscan-stub" || key_le || patch_f32_le)`,
//! then for block `j` in `0..256`, `SHA256(seed || j_u32_le)` yields eight
//! little-endian `u32` words; each word `u` becomes `(u >> 8) / 2^24`, a value
//! in `[0, 1)`.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{patch_key, BackendDescriptor, FeatureBackend, FeatureError, FeatureVector};
use crate::preprocess::Patch;
use crate::FEATURE_DIM;

pub const DEFAULT_STUB_KEY: u64 = 0x5EED_0F_BE_47_05CA;

const DOMAIN: &[u8] = b"benthoscan-stub";

#[derive(Debug, Clone)]
pub struct StubBackend {
    key: u64,
    descriptor: BackendDescriptor,
}

impl Default for StubBackend {
    fn default() -> Self {
        Self::new(DEFAULT_STUB_KEY)
    }
}

impl StubBackend {
    pub fn new(key: u64) -> Self {
        let descriptor = BackendDescriptor {
            backend_id: format!("stub-v1-{key:016x}"),
            kind: "stub".into(),
            params: BTreeMap::from([
                ("key".to_string(), format!("{key:016x}")),
                ("hash".to_string(), "sha256".to_string()),
            ]),
        };
        StubBackend { key, descriptor }
    }

    /// The vector for raw pixel values, independent of provenance.
    pub fn hash_vector(&self, pixels: &[f32]) -> Vec<f32> {
        let mut h = Sha256::new();
        h.update(DOMAIN);
        h.update(self.key.to_le_bytes());
        let bytes: Vec<u8> = pixels.iter().flat_map(|v| v.to_le_bytes()).collect();
        h.update(&bytes);
        let seed = h.finalize();
        let mut out = Vec::with_capacity(FEATURE_DIM);
        for block in 0..(FEATURE_DIM / 8) as u32 {
            let mut h = Sha256::new();
            h.update(seed);
            h.update(block.to_le_bytes());
            let digest = h.finalize();
            for word in digest.chunks_exact(4) {
                let u = u32::from_le_bytes([word[0], word[1], word[2], word[3]]);
                out.push((u >> 8) as f32 / (1u32 << 24) as f32);
            }
        }
        out
    }
}

impl FeatureBackend for StubBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn extract(&self, patch: &Patch) -> Result<FeatureVector, FeatureError> {
        FeatureVector::new(self.hash_vector(patch.pixels()), &self.descriptor.backend_id, patch_key(patch))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::PATCH_SIZE;

    fn patch(fill: f32) -> Patch {
        Patch::from_pixels("im", (5, 6), vec![fill; 3 * PATCH_SIZE * PATCH_SIZE]).unwrap()
    }

    #[test]
    fn deterministic_and_sized() {
        let b = StubBackend::default();
        let a = b.extract(&patch(0.25)).unwrap();
        let c = b.extract(&patch(0.25)).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.dim(), FEATURE_DIM);
        assert!(a.values.iter().all(|v| (0.0..1.0).contains(v)));
        assert_eq!(a.key.x, 5);
        assert_ne!(a.values, b.extract(&patch(0.5)).unwrap().values);
        assert_ne!(a.values, StubBackend::new(1).extract(&patch(0.25)).unwrap().values);
    }
}
