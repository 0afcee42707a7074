//! Checkpoint container: magic, version, JSON header describing the tensor
//! directory, then contiguous little-endian f32 payloads.
//!
//! Layout: `b"SWIMCKPT" | u32 version LE | u64 header_len LE | header JSON |
//! payload`. Tensor offsets in the header are relative to the payload start.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SWIMCKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

pub fn save_checkpoint(
    path: &Path,
    config: &serde_json::Value,
    tensors: &[(String, Vec<usize>, Vec<f32>)],
) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, shape, data) in tensors {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has {} values but shape {:?}",
                name,
                data.len(),
                shape
            )));
        }
        entries.push(TensorEntry {
            name: name.clone(),
            dtype: "f32".into(),
            shape: shape.clone(),
            offset,
        });
        offset += 4 * n as u64;
    }
    let header = Header { config: config.clone(), tensors: entries };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization: {}", e)))?;

    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut write = |buf: &[u8]| f.write_all(buf).map_err(|e| Error::io(path, e));
    write(MAGIC)?;
    write(&VERSION.to_le_bytes())?;
    write(&(header_json.len() as u64).to_le_bytes())?;
    write(&header_json)?;
    for (_, _, data) in tensors {
        let mut bytes = Vec::with_capacity(4 * data.len());
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write(&bytes)?;
    }
    Ok(())
}

pub fn load_checkpoint(
    path: &Path,
) -> Result<(serde_json::Value, Vec<(String, Vec<usize>, Vec<f32>)>)> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {})",
            version, VERSION
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let payload_start = 20 + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Checkpoint("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[20..payload_start])
        .map_err(|e| Error::Checkpoint(format!("malformed header: {}", e)))?;
    let payload = &bytes[payload_start..];

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        if e.dtype != "f32" {
            return Err(Error::Checkpoint(format!("tensor {} has unsupported dtype {}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let lo = e.offset as usize;
        let hi = lo + 4 * n;
        if hi > payload.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint truncated inside tensor {} ({} payload bytes, need {})",
                e.name,
                payload.len(),
                hi
            )));
        }
        let data: Vec<f32> = payload[lo..hi]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((e.name.clone(), e.shape.clone(), data));
    }
    Ok((header.config, tensors))
}
