//! Binary checkpoints: `DHFM`, u32 LE version, u64 LE header length,
//! JSON header, then every tensor as little-endian f32 in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{param_specs, ModelConfig, ModelParams, Slot};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DHFM";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: u64 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    /// SHA-256 of the training configuration, hex encoded.
    pub train_digest: String,
    pub epoch: usize,
    pub best_val_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    slot: String,
    shape: Vec<usize>,
    /// Offset in f32 elements from the start of the payload.
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

fn slot_name(s: Slot) -> &'static str {
    match s {
        Slot::Param => "param",
        Slot::Buffer => "buffer",
    }
}

impl Checkpoint {
    /// Fails with a mismatch error unless the stored architecture is `cfg`.
    pub fn expect_model(&self, cfg: &ModelConfig) -> Result<()> {
        if &self.meta.model != cfg {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint was trained with {}, requested {}",
                serde_json::to_string(&self.meta.model).unwrap_or_default(),
                serde_json::to_string(cfg).unwrap_or_default()
            )));
        }
        Ok(())
    }
}

/// Serializes `params` in `param_specs` order.
pub fn encode_checkpoint(params: &ModelParams, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    params.validate(&meta.model)?;
    let specs = param_specs(&meta.model)?;
    let mut tensors = Vec::with_capacity(specs.len());
    let mut payload = Vec::new();
    let mut offset = 0;
    for spec in &specs {
        let t = params.get(&spec.name)?;
        tensors.push(TensorEntry {
            name: spec.name.clone(),
            slot: slot_name(spec.slot).into(),
            shape: spec.shape.clone(),
            offset,
        });
        offset += t.numel();
        for &v in t.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header { meta: meta.clone(), tensors })
        .map_err(|e| Error::Config(format!("cannot encode checkpoint header: {e}")))?;
    let mut out = Vec::with_capacity(PREFIX_LEN as usize + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

/// Parses and validates a checkpoint. Shapes are checked against the
/// architecture in the header before any tensor is materialized.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(format_err(0, "missing DHFM magic"));
    }
    if bytes.len() < PREFIX_LEN as usize {
        return Err(format_err(bytes.len() as u64, format!("file ends inside the {PREFIX_LEN}-byte prefix")));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(format_err(4, format!("unsupported version {version} (expected {FORMAT_VERSION})")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = PREFIX_LEN.checked_add(header_len).filter(|&e| e <= bytes.len() as u64).ok_or_else(|| {
        format_err(
            8,
            format!("header length {header_len} exceeds the {} bytes after the prefix", bytes.len() as u64 - PREFIX_LEN),
        )
    })?;
    let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN as usize..header_end as usize])
        .map_err(|e| format_err(PREFIX_LEN + e.column() as u64, format!("bad header: {e}")))?;

    let specs = param_specs(&header.meta.model).map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
    if specs.len() != header.tensors.len() {
        return Err(Error::CheckpointMismatch(format!(
            "header lists {} tensors, architecture defines {}",
            header.tensors.len(),
            specs.len()
        )));
    }
    let mut expected_offset = 0;
    for (spec, entry) in specs.iter().zip(&header.tensors) {
        if spec.name != entry.name || slot_name(spec.slot) != entry.slot {
            return Err(Error::CheckpointMismatch(format!(
                "expected {} ({}), header has {} ({})",
                spec.name,
                slot_name(spec.slot),
                entry.name,
                entry.slot
            )));
        }
        if spec.shape != entry.shape {
            return Err(Error::CheckpointMismatch(format!(
                "{} has shape {:?} in the header, architecture expects {:?}",
                entry.name, entry.shape, spec.shape
            )));
        }
        if entry.offset != expected_offset {
            return Err(format_err(
                8,
                format!("{} starts at element {}, expected {expected_offset}", entry.name, entry.offset),
            ));
        }
        expected_offset += spec.shape.iter().product::<usize>();
    }
    let expected_bytes = expected_offset as u64 * 4;
    let actual_bytes = bytes.len() as u64 - header_end;
    if actual_bytes != expected_bytes {
        return Err(format_err(
            header_end,
            format!("payload is {actual_bytes} bytes, expected {expected_bytes}"),
        ));
    }

    let payload = &bytes[header_end as usize..];
    let mut params = ModelParams::default();
    for (spec, entry) in specs.iter().zip(&header.tensors) {
        let n: usize = spec.shape.iter().product();
        let data = payload[entry.offset * 4..(entry.offset + n) * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        params.insert(spec.slot, spec.name.clone(), Tensor::new(&spec.shape, data)?);
    }
    Ok(Checkpoint {
        meta: header.meta,
        params,
    })
}

pub fn save_checkpoint(params: &ModelParams, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(params, meta)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
