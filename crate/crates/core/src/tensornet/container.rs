//! Binary tensor container used for checkpoints and exported logits.
//!
//! Layout: an 8-byte little-endian header length, a UTF-8 JSON header, then
//! the little-endian `f32` payload. The header lists every tensor with its
//! shape and its element offset into the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Scalar;
use super::unet::{build_unet, UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::fsutil;

pub const FORMAT_NAME: &str = "carbseg-tensors";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dtype: String,
    metadata: serde_json::Value,
    tensors: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub metadata: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl TensorFile {
    pub fn new(metadata: serde_json::Value) -> Self {
        TensorFile {
            metadata,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {name}: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate tensor name {name}")));
        }
        self.tensors.push(NamedTensor { name, shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let index = self
            .tensors
            .iter()
            .map(|t| {
                let e = IndexEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                    len: t.data.len(),
                };
                offset += t.data.len();
                e
            })
            .collect();
        let header = Header {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            dtype: "f32".into(),
            metadata: self.metadata.clone(),
            tensors: index,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(8 + json.len() + 4 * offset);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Format(m);
        if bytes.len() < 8 {
            return Err(bad("file shorter than its length prefix".into()));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(8..8usize.saturating_add(hlen)).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(bad(format!("unsupported container {} v{}", header.format, header.version)));
        }
        if header.dtype != "f32" {
            return Err(bad(format!("unsupported scalar type {}", header.dtype)));
        }
        let payload = &bytes[8 + hlen..];
        if payload.len() % 4 != 0 {
            return Err(bad("payload is not a whole number of f32 values".into()));
        }
        let total = payload.len() / 4;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            if e.shape.iter().product::<usize>() != e.len || e.offset.checked_add(e.len).is_none_or(|end| end > total) {
                return Err(bad(format!("tensor {} has an inconsistent index entry", e.name)));
            }
            let data = payload[4 * e.offset..4 * (e.offset + e.len)]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(TensorFile {
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsutil::read(path)?)
    }
}

/// Serialize network parameters and running statistics. `extra` is stored
/// under the `extra` metadata key.
pub fn checkpoint_to_file<F: Scalar>(net: &UNet<F>, extra: serde_json::Value) -> Result<TensorFile> {
    let metadata = serde_json::json!({
        "kind": "unet-checkpoint",
        "config": net.config(),
        "step": net.store().step,
        "extra": extra,
    });
    let mut file = TensorFile::new(metadata);
    for p in &net.store().params {
        file.push(p.name.clone(), p.shape.clone(), p.value.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect())?;
    }
    for b in &net.store().buffers {
        file.push(b.name.clone(), vec![b.value.len()], b.value.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect())?;
    }
    Ok(file)
}

pub fn checkpoint_from_file(file: &TensorFile) -> Result<UNet<f32>> {
    let cfg: UNetConfig = serde_json::from_value(file.metadata.get("config").cloned().unwrap_or_default())
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let mut net = build_unet::<f32>(&cfg, 0)?;
    let store = net.store_mut();
    let expected = store.params.len() + store.buffers.len();
    if file.tensors.len() != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {} tensors, the configured network has {expected}",
            file.tensors.len()
        )));
    }
    let lookup = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let t = file
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))?;
        if t.shape != shape {
            return Err(Error::Format(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
        }
        Ok(t.data.clone())
    };
    for p in &mut store.params {
        p.value = lookup(&p.name, &p.shape)?;
    }
    for b in &mut store.buffers {
        b.value = lookup(&b.name, &[b.value.len()])?;
    }
    store.step = file.metadata.get("step").and_then(|s| s.as_u64()).unwrap_or(0);
    Ok(net)
}

pub fn save_checkpoint<F: Scalar>(net: &UNet<F>, path: &Path, extra: serde_json::Value) -> Result<()> {
    checkpoint_to_file(net, extra)?.write(path)
}

/// Returns the network and the `extra` metadata it was saved with.
pub fn load_checkpoint(path: &Path) -> Result<(UNet<f32>, serde_json::Value)> {
    let file = TensorFile::read(path)?;
    let net = checkpoint_from_file(&file)?;
    let extra = file.metadata.get("extra").cloned().unwrap_or(serde_json::Value::Null);
    Ok((net, extra))
}
