//! `MCSEGW01` checkpoint container.
//!
//! Layout: the 8 ASCII bytes `MCSEGW01`, a little-endian u64 header length,
//! a UTF-8 JSON header, then the tensor payloads as little-endian f32. The
//! header records the network config and, per tensor, its name, dtype, shape,
//! byte offset (relative to the first payload byte) and payload length.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::NetConfig;
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"MCSEGW01";

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl WeightTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::input(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(WeightTensor { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named parameters and buffers, ordered by name.
pub type ModelWeights = BTreeMap<String, WeightTensor>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: NetConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn build_header(config: &NetConfig, weights: &ModelWeights) -> Header {
    let mut offset = 0u64;
    let tensors = weights
        .iter()
        .map(|(name, t)| {
            let nbytes = 4 * t.data.len() as u64;
            let e = TensorEntry {
                name: name.clone(),
                dtype: "f32".into(),
                shape: t.shape.clone(),
                offset,
                nbytes,
            };
            offset += nbytes;
            e
        })
        .collect();
    Header {
        config: config.clone(),
        tensors,
    }
}

pub fn encode_weights(config: &NetConfig, weights: &ModelWeights) -> Result<Vec<u8>> {
    if let Some((name, _)) = weights
        .iter()
        .find(|(_, t)| t.data.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite(format!("weight tensor `{name}`")));
    }
    let header = serde_json::to_vec(&build_header(config, weights))
        .map_err(|e| Error::input(format!("cannot encode weight header: {e}")))?;
    let payload: usize = weights.values().map(|t| 4 * t.data.len()).sum();
    let mut out = Vec::with_capacity(16 + header.len() + payload);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in weights.values() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<(NetConfig, ModelWeights)> {
    if bytes.len() < 8 || &bytes[..8] != WEIGHTS_MAGIC {
        return Err(Error::format(0, "missing MCSEGW01 magic"));
    }
    let len_bytes: [u8; 8] = bytes
        .get(8..16)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::format(bytes.len() as u64, "truncated header length"))?;
    let header_len = u64::from_le_bytes(len_bytes);
    let header_end = 16u64
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| {
            Error::format(8, format!("header length {header_len} exceeds the file"))
        })? as usize;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::format(16 + e.column() as u64, format!("bad header: {e}")))?;
    let payload = &bytes[header_end..];

    let mut weights = ModelWeights::new();
    for e in &header.tensors {
        if e.dtype != "f32" {
            return Err(Error::format(
                16,
                format!("tensor `{}` has unsupported dtype {}", e.name, e.dtype),
            ));
        }
        let count: usize = e.shape.iter().product();
        if e.nbytes != 4 * count as u64 {
            return Err(Error::format(
                16,
                format!("tensor `{}`: {} bytes for shape {:?}", e.name, e.nbytes, e.shape),
            ));
        }
        let start = e.offset as usize;
        let blob = start
            .checked_add(e.nbytes as usize)
            .and_then(|end| payload.get(start..end))
            .ok_or_else(|| {
                Error::format(
                    header_end as u64 + e.offset,
                    format!("payload of tensor `{}` runs past the end of file", e.name),
                )
            })?;
        let data = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        if weights
            .insert(e.name.clone(), WeightTensor::new(e.shape.clone(), data)?)
            .is_some()
        {
            return Err(Error::format(16, format!("duplicate tensor `{}`", e.name)));
        }
    }
    Ok((header.config, weights))
}

pub fn save_weights(config: &NetConfig, weights: &ModelWeights, path: &Path) -> Result<()> {
    let bytes = encode_weights(config, weights)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<(NetConfig, ModelWeights)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_for_single_tensor() {
        let mut w = ModelWeights::new();
        w.insert(
            "t".into(),
            WeightTensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(),
        );
        let h = build_header(&NetConfig::toy(), &w);
        assert_eq!(
            h.tensors,
            vec![TensorEntry {
                name: "t".into(),
                dtype: "f32".into(),
                shape: vec![2, 3],
                offset: 0,
                nbytes: 24,
            }]
        );
        let bytes = encode_weights(&NetConfig::toy(), &w).unwrap();
        assert_eq!(&bytes[..8], b"MCSEGW01");
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 16 + header_len + 24);
        assert_eq!(&bytes[16 + header_len..16 + header_len + 4], &0.0f32.to_le_bytes());
        let (cfg, back) = decode_weights(&bytes).unwrap();
        assert_eq!(cfg, NetConfig::toy());
        assert_eq!(back, w);
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(
            decode_weights(b"NOTMAGIC\0\0\0\0\0\0\0\0"),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut w = ModelWeights::new();
        w.insert("a".into(), WeightTensor::new(vec![4], vec![1.0; 4]).unwrap());
        let bytes = encode_weights(&NetConfig::toy(), &w).unwrap();
        assert!(matches!(
            decode_weights(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn non_finite_weights_not_saved() {
        let mut w = ModelWeights::new();
        w.insert("a".into(), WeightTensor::new(vec![1], vec![f32::INFINITY]).unwrap());
        assert!(encode_weights(&NetConfig::toy(), &w).is_err());
    }
}
