//! Checkpoint container (`.bnck`).
//!
//! Layout: magic `BNCK` | u32 version | u32 json_len | JSON header |
//! tensor blobs as little-endian f32 in the header-declared order.
//! The header carries the model config, augmentation policy (with its
//! normalization stats), class names, free-form trainer state, and one
//! `(name, shape)` record per blob. Round-trips are bit-exact.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError};
use crate::augment::AugmentPolicy;

const MAGIC: &[u8; 4] = b"BNCK";
const VERSION: u32 = 1;

/// A named f32 tensor: model parameter, running statistic, or optimizer
/// moment (distinguished by name prefix, e.g. `param.`, `buffer.`, `opt.m.`).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    augment: AugmentPolicy,
    class_names: Vec<String>,
    trainer_state: serde_json::Value,
    tensors: Vec<TensorRecord>,
}

/// Everything a checkpoint holds besides raw tensor data.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointData {
    pub config: ModelConfig,
    pub augment: AugmentPolicy,
    pub class_names: Vec<String>,
    /// Opaque to this module; the trainer stores step/epoch/schedule here.
    pub trainer_state: serde_json::Value,
    pub tensors: Vec<TensorBlob>,
}

pub fn save_checkpoint(data: &CheckpointData, path: &Path) -> Result<(), ModelError> {
    let header = Header {
        config: data.config.clone(),
        augment: data.augment.clone(),
        class_names: data.class_names.clone(),
        trainer_state: data.trainer_state.clone(),
        tensors: data
            .tensors
            .iter()
            .map(|t| TensorRecord {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    for t in &data.tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(ModelError::FormatError(format!(
                "tensor {} has {} values for shape {:?}",
                t.name,
                t.data.len(),
                t.shape
            )));
        }
    }
    let json = serde_json::to_vec(&header).map_err(|e| ModelError::FormatError(e.to_string()))?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for t in &data.tensors {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData, ModelError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| ModelError::FormatError("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(ModelError::FormatError(
            "bad magic bytes (not a checkpoint file)".into(),
        ));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)
        .map_err(|_| ModelError::FormatError("truncated header".into()))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(ModelError::FormatError(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    r.read_exact(&mut u32buf)
        .map_err(|_| ModelError::FormatError("truncated header".into()))?;
    let json_len = u32::from_le_bytes(u32buf) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)
        .map_err(|_| ModelError::FormatError("truncated JSON header".into()))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| ModelError::FormatError(e.to_string()))?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for rec in &header.tensors {
        let n = rec.shape.iter().product::<usize>();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes).map_err(|_| {
            ModelError::FormatError(format!("truncated blob for tensor {}", rec.name))
        })?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(TensorBlob {
            name: rec.name.clone(),
            shape: rec.shape.clone(),
            data,
        });
    }
    Ok(CheckpointData {
        config: header.config,
        augment: header.augment,
        class_names: header.class_names,
        trainer_state: header.trainer_state,
        tensors,
    })
}

impl super::ByteNetModel<f32> {
    /// Parameters and buffers as checkpoint blobs, in registry order.
    pub fn state_blobs(&self) -> Vec<TensorBlob> {
        let mut out = Vec::new();
        for (name, p) in self.parameters() {
            out.push(TensorBlob {
                name: format!("param.{name}"),
                shape: p.shape().to_vec(),
                data: p.to_vec(),
            });
        }
        for (name, b) in self.buffers() {
            let data = b.borrow().clone();
            out.push(TensorBlob {
                name: format!("buffer.{name}"),
                shape: vec![data.len()],
                data,
            });
        }
        out
    }

    /// Restore parameters and buffers from checkpoint blobs by name.
    pub fn load_state_blobs(&self, blobs: &[TensorBlob]) -> Result<(), ModelError> {
        let mut by_name: std::collections::HashMap<&str, &TensorBlob> =
            blobs.iter().map(|b| (b.name.as_str(), b)).collect();
        for (name, p) in self.parameters() {
            let key = format!("param.{name}");
            let blob = by_name
                .remove(key.as_str())
                .ok_or_else(|| ModelError::FormatError(format!("missing tensor {key}")))?;
            if blob.shape != p.shape() {
                return Err(ModelError::FormatError(format!(
                    "tensor {key}: shape {:?} in file, model wants {:?}",
                    blob.shape,
                    p.shape()
                )));
            }
            p.data_mut().copy_from_slice(&blob.data);
        }
        for (name, b) in self.buffers() {
            let key = format!("buffer.{name}");
            let blob = by_name
                .remove(key.as_str())
                .ok_or_else(|| ModelError::FormatError(format!("missing tensor {key}")))?;
            let mut dst = b.borrow_mut();
            if blob.data.len() != dst.len() {
                return Err(ModelError::FormatError(format!(
                    "tensor {key}: {} values in file, model wants {}",
                    blob.data.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(&blob.data);
        }
        Ok(())
    }
}
