//! Flat binary tensor container with a JSON manifest.
//!
//! Layout: 8-byte magic, little-endian `u64` manifest length, the manifest
//! as UTF-8 JSON, then every tensor's values as little-endian `f64` in
//! manifest order. Manifest offsets are byte offsets into the data section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CMGNNCK1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    count: usize,
}

/// Named tensors plus free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorArchive {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl TensorArchive {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = Entry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                    count: t.len(),
                };
                offset += t.len() * 8;
                e
            })
            .collect();
        let manifest = Manifest {
            format: "cmgnn-checkpoint".into(),
            version: 1,
            meta: self.meta.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json_end = 16usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..json_end])?;
        if manifest.version != 1 {
            return Err(bad("unsupported checkpoint version"));
        }
        let data = &bytes[json_end..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            let end = e.offset + e.count * 8;
            if end > data.len() || e.shape.iter().product::<usize>() != e.count {
                return Err(Error::Checkpoint(format!("bad extent for `{}`", e.name)));
            }
            let values = data[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((e.name, Tensor::new(e.shape, values)?));
        }
        Ok(Self {
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip_exactly(
            a in prop::collection::vec(-1e300f64..1e300, 0..40),
            b in prop::collection::vec(-1.0f64..1.0, 6),
        ) {
            let archive = TensorArchive {
                meta: serde_json::json!({"epoch": 3, "hash": "abc"}),
                tensors: vec![
                    ("a".into(), Tensor::vector(a)),
                    ("b".into(), Tensor::matrix(2, 3, b).unwrap()),
                ],
            };
            let bytes = archive.to_bytes().unwrap();
            let back = TensorArchive::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &archive);
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(TensorArchive::from_bytes(b"not a checkpoint").is_err());
        let mut bytes = TensorArchive {
            meta: serde_json::Value::Null,
            tensors: vec![("x".into(), Tensor::vector(vec![1.0, 2.0]))],
        }
        .to_bytes()
        .unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(TensorArchive::from_bytes(&bytes).is_err());
    }
}
