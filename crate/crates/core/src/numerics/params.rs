//! Named parameter store and its on-disk checkpoint format: a u64 LE header
//! length, a JSON header with names/shapes/metadata, then LE f64 values in
//! header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    params: Vec<ParamEntry>,
    meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_squares).sum()
    }

    /// Places every parameter on the tape as a gradient-enabled leaf.
    pub fn attach(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| g.leaf(t.clone(), requires_grad)).collect()
    }

    pub fn to_bytes(&self, meta: &serde_json::Value) -> Result<Vec<u8>> {
        let header = Header {
            params: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| ParamEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            meta: meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(8 + json.len() + 8 * self.numel());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(ParamSet, serde_json::Value)> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 8 {
            return Err(bad("file shorter than header length field"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(8..8usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut offset = 8 + hlen;
        let mut set = ParamSet::new();
        for p in header.params {
            let n: usize = p.shape.iter().product();
            let end = offset + 8 * n;
            let raw = bytes.get(offset..end).ok_or_else(|| bad("truncated parameter data"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            set.push(p.name, Tensor::new(p.shape, data)?);
            offset = end;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after parameter data"));
        }
        if !set.tensors.iter().all(Tensor::all_finite) {
            return Err(bad("non-finite parameter value"));
        }
        Ok((set, header.meta))
    }

    pub fn save(&self, path: &Path, meta: &serde_json::Value) -> Result<()> {
        fs::write(path, self.to_bytes(meta)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(ParamSet, serde_json::Value)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut p = ParamSet::new();
        p.push("a", Tensor::new(vec![2, 2], vec![0.1, -2.5, 1e-300, 7.0]).unwrap());
        p.push("b", Tensor::scalar(std::f64::consts::PI));
        let meta = serde_json::json!({"k": 1});
        let bytes = p.to_bytes(&meta).unwrap();
        let (q, m) = ParamSet::from_bytes(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(m, meta);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut p = ParamSet::new();
        p.push("a", Tensor::scalar(1.0));
        let bytes = p.to_bytes(&serde_json::Value::Null).unwrap();
        assert!(ParamSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(ParamSet::from_bytes(&bytes[..4]).is_err());
    }
}
