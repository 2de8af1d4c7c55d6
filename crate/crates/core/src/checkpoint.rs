//! Single-file model checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (config, history, best epoch, tensor index), then every tensor as
//! little-endian `f64` in index order.

use std::fs;
use std::path::Path;

use penkick_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{param_specs, Model, ModelConfig};
use crate::training::EpochRecord;

const MAGIC: &[u8; 8] = b"PKCKPT\r\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters are stored, 0 for an untrained model.
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TensorKind {
    Param,
    Buffer,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: TensorKind,
    shape: Vec<usize>,
    /// Offset into the data section, in elements.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    history: Vec<EpochRecord>,
    best_epoch: usize,
    tensors: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn untrained(model: Model) -> Self {
        Self {
            model,
            history: Vec::new(),
            best_epoch: 0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut data: Vec<&Tensor> = Vec::new();
        let mut offset = 0;
        let all = self
            .model
            .params
            .iter()
            .map(|(n, t)| (n, t, TensorKind::Param))
            .chain(self.model.buffers.iter().map(|(n, t)| (n, t, TensorKind::Buffer)));
        for (name, t, kind) in all {
            tensors.push(TensorEntry {
                name: name.clone(),
                kind,
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
            data.push(t);
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.model.config.clone(),
            history: self.history.clone(),
            best_epoch: self.best_epoch,
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(20 + json.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in data {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let data_start = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..data_start]).map_err(|e| corrupt(format!("bad header: {e}")))?;
        let data = &bytes[data_start..];
        let mut params = std::collections::BTreeMap::new();
        let mut buffers = std::collections::BTreeMap::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let (lo, hi) = (e.offset * 8, (e.offset + n) * 8);
            if hi > data.len() {
                return Err(corrupt(format!("tensor `{}` runs past the end of the file", e.name)));
            }
            let values: Vec<f64> = data[lo..hi]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::from_shape_vec(ndarray::IxDyn(&e.shape), values)
                .map_err(|err| corrupt(format!("tensor `{}`: {err}", e.name)))?;
            match e.kind {
                TensorKind::Param => params.insert(e.name.clone(), t),
                TensorKind::Buffer => buffers.insert(e.name.clone(), t),
            };
        }
        let model = Model {
            config: header.config,
            params,
            buffers,
        };
        model.config.validate().map_err(|e| corrupt(e.to_string()))?;
        model.check_layout()?;
        Ok(Self {
            model,
            history: header.history,
            best_epoch: header.best_epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks the stored layers against `expected`, naming the
    /// first layer (in stored order) that differs.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        let want: std::collections::BTreeMap<String, Vec<usize>> =
            param_specs(expected).into_iter().map(|s| (s.name, s.shape)).collect();
        for s in param_specs(&ck.model.config) {
            match want.get(&s.name) {
                None => return Err(corrupt(format!("layer `{}` is not part of the expected model", s.name))),
                Some(shape) if *shape != s.shape => {
                    return Err(corrupt(format!(
                        "layer `{}` has shape {:?} in checkpoint, expected {:?}",
                        s.name, s.shape, shape
                    )))
                }
                _ => {}
            }
        }
        if let Some(missing) = param_specs(expected)
            .into_iter()
            .find(|s| !ck.model.params.contains_key(&s.name))
        {
            return Err(corrupt(format!("layer `{}` missing from checkpoint", missing.name)));
        }
        if ck.model.config != *expected {
            return Err(corrupt("layers match but configuration fields differ"));
        }
        Ok(ck)
    }
}
