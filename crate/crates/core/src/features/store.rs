//! Append-only feature cache.
//!
//! Layout (little-endian): header `"BSFC" | version u16 | dim u16`, then records
//! `key | dim × f32 | crc32(key ‖ values) u32`, where
//! `key = len u16 | image_id | x u32 | y u32 | len u16 | backend_id`.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{FeatureError, FeatureVector, PatchKey};
use crate::FEATURE_DIM;

pub const STORE_MAGIC: &[u8; 4] = b"BSFC";
pub const STORE_VERSION: u16 = 1;
const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StoreKey {
    pub image_id: String,
    pub x: u32,
    pub y: u32,
    pub backend_id: String,
}

#[derive(Debug)]
pub struct FeatureStore {
    path: PathBuf,
    dim: usize,
    records: Vec<FeatureVector>,
    index: HashMap<StoreKey, usize>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FeatureError + '_ {
    move |source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn encode_key(out: &mut Vec<u8>, key: &PatchKey, backend_id: &str) {
    out.extend((key.image_id.len() as u16).to_le_bytes());
    out.extend(key.image_id.as_bytes());
    out.extend(key.x.to_le_bytes());
    out.extend(key.y.to_le_bytes());
    out.extend((backend_id.len() as u16).to_le_bytes());
    out.extend(backend_id.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Option<Result<String, std::string::FromUtf8Error>> {
        let n = self.u16()? as usize;
        self.take(n).map(|b| String::from_utf8(b.to_vec()))
    }
}

impl FeatureStore {
    /// Opens an existing cache, verifying every record, or creates an empty one.
    pub fn open(path: &Path) -> Result<Self, FeatureError> {
        if !path.exists() {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io_err(path))?;
            }
            let mut header = Vec::with_capacity(HEADER_LEN);
            header.extend(STORE_MAGIC);
            header.extend(STORE_VERSION.to_le_bytes());
            header.extend((FEATURE_DIM as u16).to_le_bytes());
            fs::write(path, header).map_err(io_err(path))?;
            return Ok(FeatureStore {
                path: path.to_path_buf(),
                dim: FEATURE_DIM,
                records: Vec::new(),
                index: HashMap::new(),
            });
        }
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::decode(path, &bytes)
    }

    fn decode(path: &Path, bytes: &[u8]) -> Result<Self, FeatureError> {
        let corrupt = |offset: usize, reason: &str| FeatureError::CacheCorrupt {
            path: path.display().to_string(),
            offset: offset as u64,
            reason: reason.to_string(),
        };
        if bytes.len() < HEADER_LEN || &bytes[..4] != STORE_MAGIC {
            return Err(corrupt(0, "missing BSFC header"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != STORE_VERSION {
            return Err(corrupt(4, &format!("unsupported version {version}")));
        }
        let dim = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        if dim != FEATURE_DIM {
            return Err(corrupt(6, &format!("dimension {dim}, expected {FEATURE_DIM}")));
        }
        let mut store = FeatureStore {
            path: path.to_path_buf(),
            dim,
            records: Vec::new(),
            index: HashMap::new(),
        };
        let mut cur = Cursor {
            buf: bytes,
            pos: HEADER_LEN,
        };
        while cur.pos < bytes.len() {
            let start = cur.pos;
            let truncated = || corrupt(start, "truncated record");
            let image_id = cur.string().ok_or_else(truncated)?.map_err(|_| corrupt(start, "image id is not UTF-8"))?;
            let x = cur.u32().ok_or_else(truncated)?;
            let y = cur.u32().ok_or_else(truncated)?;
            let backend_id = cur.string().ok_or_else(truncated)?.map_err(|_| corrupt(start, "backend id is not UTF-8"))?;
            let raw = cur.take(dim * 4).ok_or_else(truncated)?;
            let body_end = cur.pos;
            let checksum = cur.u32().ok_or_else(truncated)?;
            if crc32fast::hash(&bytes[start..body_end]) != checksum {
                return Err(corrupt(start, "checksum mismatch"));
            }
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let fv = FeatureVector::new(values, backend_id, PatchKey { image_id, x, y }).map_err(|_| corrupt(start, "non-finite value"))?;
            store.insert(fv);
        }
        Ok(store)
    }

    fn insert(&mut self, fv: FeatureVector) -> bool {
        let key = StoreKey {
            image_id: fv.key.image_id.clone(),
            x: fv.key.x,
            y: fv.key.y,
            backend_id: fv.backend_id.clone(),
        };
        if self.index.contains_key(&key) {
            return false;
        }
        self.index.insert(key, self.records.len());
        self.records.push(fv);
        true
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[FeatureVector] {
        &self.records
    }

    pub fn contains(&self, image_id: &str, x: u32, y: u32, backend_id: &str) -> bool {
        self.get(image_id, x, y, backend_id).is_some()
    }

    pub fn get(&self, image_id: &str, x: u32, y: u32, backend_id: &str) -> Option<&FeatureVector> {
        let key = StoreKey {
            image_id: image_id.to_string(),
            x,
            y,
            backend_id: backend_id.to_string(),
        };
        self.index.get(&key).map(|&i| &self.records[i])
    }

    /// Backend ids present in the store, in first-seen order.
    pub fn backend_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for r in &self.records {
            if !ids.contains(&r.backend_id) {
                ids.push(r.backend_id.clone());
            }
        }
        ids
    }

    /// Appends vectors whose key is not yet stored; returns how many were written.
    pub fn append_batch(&mut self, vectors: &[FeatureVector]) -> Result<usize, FeatureError> {
        let mut buf = Vec::new();
        let mut written = 0;
        for fv in vectors {
            if fv.dim() != self.dim {
                return Err(FeatureError::DimensionMismatch {
                    expected: self.dim,
                    got: fv.dim(),
                });
            }
            if !self.insert(fv.clone()) {
                continue;
            }
            let start = buf.len();
            encode_key(&mut buf, &fv.key, &fv.backend_id);
            for v in &fv.values {
                buf.extend(v.to_le_bytes());
            }
            let crc = crc32fast::hash(&buf[start..]);
            buf.extend(crc.to_le_bytes());
            written += 1;
        }
        if written > 0 {
            let file = OpenOptions::new().append(true).open(&self.path).map_err(io_err(&self.path))?;
            let mut w = BufWriter::new(file);
            w.write_all(&buf).map_err(io_err(&self.path))?;
            w.flush().map_err(io_err(&self.path))?;
        }
        Ok(written)
    }

    /// Re-reads the file from disk.
    pub fn reload(&self) -> Result<FeatureStore, FeatureError> {
        let bytes = fs::read(&self.path).map_err(io_err(&self.path))?;
        Self::decode(&self.path, &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(id: &str, x: u32, fill: f32) -> FeatureVector {
        FeatureVector::new(
            vec![fill; FEATURE_DIM],
            "stub-test",
            PatchKey {
                image_id: id.into(),
                x,
                y: 3,
            },
        )
        .unwrap()
    }

    #[test]
    fn header_and_append() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bsfc");
        let mut s = FeatureStore::open(&path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"BSFC\x01\x00\x00\x08");
        assert_eq!(s.append_batch(&[fv("a", 1, 0.5), fv("a", 1, 0.7), fv("b", 2, 0.1)]).unwrap(), 2);
        let again = FeatureStore::open(&path).unwrap();
        assert_eq!(again.len(), 2);
        assert_eq!(again.get("a", 1, 3, "stub-test").unwrap().values[0], 0.5);
        assert!(again.get("a", 1, 3, "other").is_none());
    }

    #[test]
    fn flipped_byte_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bsfc");
        let mut s = FeatureStore::open(&path).unwrap();
        s.append_batch(&[fv("a", 1, 0.5)]).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 100] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(FeatureStore::open(&path), Err(FeatureError::CacheCorrupt { .. })));
        bytes.truncate(n - 101);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(FeatureStore::open(&path), Err(FeatureError::CacheCorrupt { .. })));
        fs::write(&path, b"NOPE\x01\x00\x00\x08").unwrap();
        assert!(matches!(FeatureStore::open(&path), Err(FeatureError::CacheCorrupt { offset: 0, .. })));
    }

    #[test]
    fn rejects_wrong_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = FeatureStore::open(&dir.path().join("c.bsfc")).unwrap();
        let short = FeatureVector::new(vec![0.0; 4], "x", PatchKey { image_id: "a".into(), x: 0, y: 0 }).unwrap();
        assert!(matches!(s.append_batch(&[short]), Err(FeatureError::DimensionMismatch { .. })));
    }
}
