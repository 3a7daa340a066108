//! Binary checkpoint: magic, manifest length (u64 LE), JSON manifest, then
//! raw little-endian f64 arrays at the manifest's byte offsets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"OMGPTCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the data section.
    pub offset: usize,
    #[serde(default)]
    pub no_decay: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(TensorEntry, Tensor)>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, t: &Tensor, no_decay: bool) {
        let offset = self.tensors.last().map(|(e, t)| e.offset + 8 * t.numel()).unwrap_or(0);
        self.tensors.push((
            TensorEntry {
                name: name.to_string(),
                shape: t.shape.clone(),
                dtype: "f64".into(),
                offset,
                no_decay,
            },
            t.clone(),
        ));
    }

    pub fn push_store(&mut self, store: &ParamStore) {
        for (_, p) in store.iter() {
            self.push(&p.name, &p.value, p.no_decay);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(e, _)| e.name == name).map(|(_, t)| t)
    }

    /// Copy every parameter of `store` from the checkpoint, checking names
    /// and shapes.
    pub fn restore_store(&self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
        for (id, name) in ids {
            let t = self
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
            let dst = store.value_mut(id);
            if dst.shape != t.shape {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?} in the checkpoint, {:?} in the model",
                    t.shape, dst.shape
                )));
            }
            dst.data.copy_from_slice(&t.data);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            meta: self.meta.clone(),
            tensors: self.tensors.iter().map(|(e, _)| e.clone()).collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + self.tensors.iter().map(|(_, t)| 8 * t.numel()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = 16usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..body])?;
        let data = &bytes[body..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        let mut expected = 0usize;
        for e in manifest.tensors {
            if e.dtype != "f64" {
                return Err(Error::Format(format!("tensor {} has unsupported dtype {}", e.name, e.dtype)));
            }
            if e.offset != expected {
                return Err(Error::Format(format!("tensor {} at offset {}, expected {expected}", e.name, e.offset)));
            }
            let n: usize = e.shape.iter().product();
            let end = e.offset + 8 * n;
            if end > data.len() {
                return Err(Error::Format(format!("tensor {} runs past the end of the file", e.name)));
            }
            let vals = data[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(e.shape.clone(), vals)?;
            expected = end;
            tensors.push((e, t));
        }
        if expected != data.len() {
            return Err(Error::Format(format!("{} trailing bytes after the last tensor", data.len() - expected)));
        }
        Ok(Self {
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(serde_json::json!({"k": 1}));
        c.push("a", &Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE]).unwrap(), false);
        c.push("b", &Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap(), true);
        c
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn restore_checks_shapes() {
        let c = sample();
        let mut store = ParamStore::new();
        store.add_const("a", vec![2, 2], 0.0, false).unwrap();
        c.restore_store(&mut store).unwrap();
        assert_eq!(store.value(store.id("a").unwrap()).data[1], -2.5);
        let mut wrong = ParamStore::new();
        wrong.add_const("a", vec![4], 0.0, false).unwrap();
        assert!(c.restore_store(&mut wrong).is_err());
        let mut missing = ParamStore::new();
        missing.add_const("zz", vec![1], 0.0, false).unwrap();
        assert!(c.restore_store(&mut missing).is_err());
    }
}
