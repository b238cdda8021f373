//! Binary checkpoint format.
//!
//! ```text
//! offset 0   8 bytes   magic "MTSNCKPT"
//! offset 8   u32 LE    header length N
//! offset 12  N bytes   UTF-8 JSON header
//! offset 12+N          f64 LE payload: every tensor listed in the header,
//!                      in header order, row-major
//! ```
//!
//! The header lists model parameters first, then the optimizer's first and
//! second moments as `adam.m/<param>` and `adam.v/<param>` (absent before the
//! first optimizer step). The file must end exactly after the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FrameworkRegistry, IntentModel, ModelDims};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::optim::{AdamConfig, AdamState, Moments};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MTSNCKPT";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    kind: String,
    dims: ModelDims,
    loss: LossConfig,
    tensors: Vec<TensorEntry>,
    optimizer: OptimizerHeader,
    meta: TrainingMeta,
}

/// A model with the optimizer state and bookkeeping needed to resume.
pub struct Checkpoint {
    pub model: Box<dyn IntentModel>,
    pub optimizer: AdamState,
    pub meta: TrainingMeta,
}

impl std::fmt::Debug for Checkpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Checkpoint")
            .field("kind", &self.model.kind())
            .field("dims", &self.model.dims())
            .field("optimizer_step", &self.optimizer.step)
            .field("meta", &self.meta)
            .finish()
    }
}

pub fn encode_checkpoint(
    model: &dyn IntentModel,
    optimizer: &AdamState,
    meta: &TrainingMeta,
) -> Result<Vec<u8>> {
    let mut tensors: Vec<(String, &Tensor)> = model
        .parameters()
        .into_iter()
        .map(|p| (p.name.clone(), &p.value))
        .collect();
    for m in &optimizer.moments {
        tensors.push((format!("adam.m/{}", m.name), &m.m));
    }
    for m in &optimizer.moments {
        tensors.push((format!("adam.v/{}", m.name), &m.v));
    }
    let header = Header {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: model.kind().to_string(),
        dims: model.dims(),
        loss: model.loss_config(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        optimizer: OptimizerHeader {
            config: optimizer.config,
            step: optimizer.step,
        },
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
    let mut out = Vec::with_capacity(12 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    let len = u32::try_from(json.len()).map_err(|_| Error::Contract("header too large".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(
    path: &Path,
    model: &dyn IntentModel,
    optimizer: &AdamState,
    meta: &TrainingMeta,
) -> Result<()> {
    let bytes = encode_checkpoint(model, optimizer, meta)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // Write then rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, registry: &FrameworkRegistry) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, registry)
}

fn parse_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        detail: detail.into(),
    }
}

pub fn decode_checkpoint(bytes: &[u8], registry: &FrameworkRegistry) -> Result<Checkpoint> {
    if bytes.len() < 12 {
        return Err(parse_err(bytes.len(), "file shorter than the fixed preamble"));
    }
    if &bytes[..8] != MAGIC {
        return Err(parse_err(0, "bad magic"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = 12usize
        .checked_add(len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| parse_err(bytes.len(), format!("header of {len} bytes is truncated")))?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes[12..body])
        .map_err(|e| parse_err(12 + e.column().saturating_sub(1), e.to_string()))?;
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| parse_err(12, "header lacks format_version"))?;
    if version != CHECKPOINT_FORMAT_VERSION as u64 {
        return Err(Error::Version {
            found: version as u32,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let header: Header =
        serde_json::from_value(raw).map_err(|e| parse_err(12, e.to_string()))?;

    let mut offset = body;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        let end = count
            .checked_mul(8)
            .and_then(|n| offset.checked_add(n))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| parse_err(bytes.len(), format!("payload truncated in `{}`", entry.name)))?;
        let data = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(entry.shape.clone(), data).map_err(|e| parse_err(offset, e.to_string()))?;
        tensors.push((entry.name.clone(), t));
        offset = end;
    }
    if offset != bytes.len() {
        return Err(parse_err(offset, "trailing bytes after payload"));
    }

    let mut params = Vec::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (name, t) in tensors {
        if let Some(p) = name.strip_prefix("adam.m/") {
            m.push((p.to_string(), t));
        } else if let Some(p) = name.strip_prefix("adam.v/") {
            v.push((p.to_string(), t));
        } else {
            params.push((name, t));
        }
    }
    let framework = registry.get(&header.kind)?;
    let model = (framework.restore)(header.dims, header.loss, params)?;

    let mut optimizer = AdamState::new(header.optimizer.config)?;
    optimizer.step = header.optimizer.step;
    if !m.is_empty() || !v.is_empty() {
        let names: Vec<&str> = model.parameters().iter().map(|p| p.name.as_str()).collect();
        let m_names: Vec<&str> = m.iter().map(|(n, _)| n.as_str()).collect();
        let v_names: Vec<&str> = v.iter().map(|(n, _)| n.as_str()).collect();
        if m_names != names || v_names != names {
            return Err(parse_err(12, "optimizer moments do not match the parameter list"));
        }
        optimizer.moments = m
            .into_iter()
            .zip(v)
            .map(|((name, m), (_, v))| Moments { name, m, v })
            .collect();
    }
    Ok(Checkpoint {
        model,
        optimizer,
        meta: header.meta,
    })
}
