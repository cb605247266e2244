//! Versioned checkpoint container.
//!
//! ```text
//! magic "PCBGPPCK" | u32 version | u64 header length | JSON header | tensors
//! ```
//!
//! The JSON header echoes the model configuration, carries free-form
//! metadata (the trainer stores its configuration and epoch there) and
//! lists every tensor's name and shape. Tensor data follows in header order
//! as little-endian `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Detector, ModelConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PCBGPPCK";
pub const VERSION: u32 = 1;
/// Name prefix of tensors that do not belong to the network.
pub const AUX_PREFIX: &str = "aux/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// A named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Captures every network parameter, running statistics included.
    pub fn from_detector(det: &Detector<f32>, meta: serde_json::Value) -> Self {
        let tensors = det
            .params()
            .into_iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.value.clone(),
            })
            .collect();
        Self {
            model: det.config.clone(),
            meta,
            tensors,
        }
    }

    /// Adds a tensor outside the network; its name gets [`AUX_PREFIX`].
    pub fn push_aux(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) {
        self.tensors.push(NamedTensor {
            name: format!("{AUX_PREFIX}{name}"),
            shape,
            data,
        });
    }

    pub fn aux(&self, name: &str) -> Option<&NamedTensor> {
        let full = format!("{AUX_PREFIX}{name}");
        self.tensors.iter().find(|t| t.name == full)
    }

    /// Rebuilds the network, requiring an exact name and shape match for
    /// every parameter of the echoed configuration.
    pub fn detector(&self) -> Result<Detector<f32>> {
        let mut det = Detector::<f32>::new(self.model.clone())?;
        let mut used = 0;
        for p in det.params_mut() {
            let t = self
                .tensors
                .iter()
                .find(|t| t.name == p.name)
                .ok_or_else(|| corrupt(format!("missing parameter {}", p.name)))?;
            if t.shape != p.shape {
                return Err(corrupt(format!(
                    "parameter {} has shape {:?}, configuration expects {:?}",
                    p.name, t.shape, p.shape
                )));
            }
            p.value.clone_from(&t.data);
            used += 1;
        }
        let network = self
            .tensors
            .iter()
            .filter(|t| !t.name.starts_with(AUX_PREFIX))
            .count();
        if network != used {
            let names: Vec<String> = det.params().iter().map(|p| p.name.clone()).collect();
            let extra: Vec<&str> = self
                .tensors
                .iter()
                .filter(|t| !t.name.starts_with(AUX_PREFIX) && !names.contains(&t.name))
                .map(|t| t.name.as_str())
                .collect();
            return Err(corrupt(format!(
                "tensors not in the configuration: {extra:?}"
            )));
        }
        Ok(det)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: VERSION,
            model: self.model.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
        let data_len: usize = self.tensors.iter().map(|t| t.data.len() * 4).sum();
        let mut out = Vec::with_capacity(20 + json.len() + data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            if t.data.len() != t.shape.iter().product::<usize>() {
                return Err(corrupt(format!(
                    "tensor {} data does not match its shape",
                    t.name
                )));
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(corrupt(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(20..20 + len)
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| corrupt(format!("bad header: {e}")))?;
        let mut at = 20 + len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let raw = bytes
                .get(at..at + 4 * n)
                .ok_or_else(|| corrupt(format!("truncated data for {}", e.name)))?;
            at += 4 * n;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        if at != bytes.len() {
            return Err(corrupt("trailing bytes after tensor data"));
        }
        Ok(Self {
            model: header.model,
            meta: header.meta,
            tensors,
        })
    }

    /// Writes via a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("partial");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes()?)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
