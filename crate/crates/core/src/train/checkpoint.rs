//! Versioned binary checkpoints.
//!
//! Layout: an 8-byte magic, a little-endian u32 format version, a
//! little-endian u64 header length, a JSON header (model config plus the
//! ordered parameter names and shapes), then the raw little-endian f32
//! parameter data in header order. Save -> load -> save is
//! byte-identical.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SCIQACKP";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    params: Vec<ParamHeader>,
}

pub fn save_checkpoint(params: &ModelParams, config: &ModelConfig, path: &Path) -> Result<()> {
    let header = Header {
        config: config.clone(),
        params: params
            .entries()
            .iter()
            .map(|(name, t)| ParamHeader {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, t) in params.entries() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "incompatible checkpoint version {version}, expected {VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body_start = 20 + header_len;
    if bytes.len() < body_start {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[20..body_start])
        .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
    let total: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if bytes.len() != body_start + 4 * total {
        return Err(Error::Checkpoint(format!(
            "payload size {} does not match header ({} values expected)",
            bytes.len() - body_start,
            total
        )));
    }
    let mut offset = body_start;
    let mut entries = Vec::with_capacity(header.params.len());
    for p in &header.params {
        let count: usize = p.shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()));
            offset += 4;
        }
        entries.push((p.name.clone(), Tensor::from_vec(&p.shape, data)));
    }
    let params = ModelParams::from_entries(entries);
    if !params.matches_config(&header.config) {
        return Err(Error::Checkpoint(
            "parameter tensors do not match the stored config".into(),
        ));
    }
    Ok((params, header.config))
}
