//! Named parameter sets and their on-disk form: a flat little-endian `f64`
//! stream plus a JSON sidecar listing `{name, shape}` in stream order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Ordered collection of named tensors. Order is insertion order and is
/// what the binary stream follows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.entries.push((name, value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn manifest(&self) -> Vec<ParamEntry> {
        self.entries
            .iter()
            .map(|(n, t)| ParamEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in self.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(manifest: &[ParamEntry], bytes: &[u8]) -> Result<Self> {
        let total: usize = manifest.iter().map(|e| e.shape.iter().product::<usize>()).sum();
        if bytes.len() != total * 8 {
            return Err(Error::contract(format!(
                "parameter stream holds {} bytes, manifest expects {}",
                bytes.len(),
                total * 8
            )));
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut set = ParamSet::new();
        for e in manifest {
            let n = e.shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            set.push(e.name.clone(), Tensor::new(&e.shape, data)?);
        }
        Ok(set)
    }

    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let (bin, json) = sidecar_paths(stem);
        fs::write(bin, self.to_bytes())?;
        fs::write(json, serde_json::to_string_pretty(&self.manifest())?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (bin, json) = sidecar_paths(stem);
        let manifest: Vec<ParamEntry> = serde_json::from_str(&fs::read_to_string(json)?)?;
        Self::from_bytes(&manifest, &fs::read(bin)?)
    }
}

fn sidecar_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn little_endian_layout() {
        let mut p = ParamSet::new();
        p.push("a", Tensor::vector(&[1.0]));
        assert_eq!(p.to_bytes(), 1.0f64.to_le_bytes().to_vec());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParamSet::new();
        p.push("queries", Tensor::from_fn(&[3, 2], |i| i as f64 * -0.5));
        p.push("bias", Tensor::vector(&[f64::MIN_POSITIVE, 1e300]));
        let stem = dir.path().join("model");
        p.save(&stem).unwrap();
        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json")).unwrap()).unwrap();
        assert_eq!(sidecar[0]["name"], "queries");
        assert_eq!(sidecar[1]["shape"], serde_json::json!([2]));
        assert_eq!(ParamSet::load(&stem).unwrap(), p);
    }

    #[test]
    fn truncated_stream_rejected() {
        let manifest = vec![ParamEntry { name: "x".into(), shape: vec![2] }];
        assert!(ParamSet::from_bytes(&manifest, &[0u8; 8]).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(values in proptest::collection::vec(any::<f64>(), 1..40)) {
            let mut p = ParamSet::new();
            p.push("v", Tensor::vector(&values));
            let back = ParamSet::from_bytes(&p.manifest(), &p.to_bytes()).unwrap();
            let got = back.get("v").unwrap().data();
            prop_assert!(got.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
