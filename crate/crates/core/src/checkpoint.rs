//! Binary checkpoints.
//!
//! Layout: `b"LGFM"`, version byte `0x01`, manifest length as `u64` LE, a UTF-8
//! JSON manifest, then every parameter as raw `f64` LE in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::config::TrainConfig;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::ModelParameters;

pub const MAGIC: &[u8; 4] = b"LGFM";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: TrainConfig,
    pub nodes: usize,
    pub classes: usize,
    pub norm: Option<NormStats>,
    pub parameters: Vec<ParamEntry>,
}

pub fn encode(params: &ModelParameters) -> Result<Vec<u8>> {
    let manifest = Manifest {
        config: params.config.clone(),
        nodes: params.nodes,
        classes: params.classes,
        norm: params.norm.clone(),
        parameters: params
            .store
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(13 + json.len() + 8 * params.store.num_scalars());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in params.store.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<ModelParameters> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    if bytes.len() < 13 {
        return Err(Error::Integrity("file truncated inside the header".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let len = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let body = &bytes[13..];
    let len = usize::try_from(len)
        .ok()
        .filter(|l| *l <= body.len())
        .ok_or_else(|| Error::Integrity("file truncated inside the manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(&body[..len])
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    let data = &body[len..];

    let mut params = ModelParameters::init(&manifest.config, manifest.nodes, manifest.classes)
        .map_err(|e| Error::Integrity(format!("manifest does not describe a model: {e}")))?;
    if params.store.len() != manifest.parameters.len() {
        return Err(Error::Integrity(format!(
            "manifest lists {} parameters, the model has {}",
            manifest.parameters.len(),
            params.store.len()
        )));
    }
    let expected: usize = manifest.parameters.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if data.len() != expected * 8 {
        return Err(Error::Integrity(format!(
            "expected {} parameter bytes, found {}",
            expected * 8,
            data.len()
        )));
    }
    let mut offset = 0;
    for (entry, (name, tensor)) in manifest.parameters.iter().zip(params.store.iter_mut()) {
        if entry.name != name || entry.shape != tensor.shape() {
            return Err(Error::Integrity(format!(
                "parameter `{}` {:?} does not match model parameter `{name}` {:?}",
                entry.name,
                entry.shape,
                tensor.shape()
            )));
        }
        let count = tensor.numel();
        let values = data[offset..offset + 8 * count]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        *tensor = Tensor::new(entry.shape.clone(), values)?;
        offset += 8 * count;
    }
    params.norm = manifest.norm;
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParameters, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParameters> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
