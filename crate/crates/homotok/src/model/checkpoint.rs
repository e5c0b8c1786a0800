//! Checkpoint format, byte-exact so other implementations can interoperate:
//!
//! ```text
//! bytes 0..8    magic "HTCKPT01"
//! bytes 8..16   header length H, u64 little-endian
//! bytes 16..16+H  UTF-8 JSON header:
//!     {"config": <ModelConfig>,
//!      "tensors": [{"name": .., "shape": [..], "dtype": "f64",
//!                   "offset": <bytes from payload start>, "len": <element count>}, ..]}
//! bytes 16+H..  payload: little-endian IEEE-754 f64 values, tensors
//!               concatenated in header order (ascending name)
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{tensor_shapes, ModelConfig, ModelError, Parameters};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HTCKPT01";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint<W: Write>(
    w: &mut W,
    cfg: &ModelConfig,
    params: &Parameters,
) -> Result<(), ModelError> {
    let mut entries = Vec::with_capacity(params.tensors.len());
    let mut offset = 0u64;
    for (name, t) in &params.tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape.clone(),
            dtype: "f64".into(),
            offset,
            len: t.len() as u64,
        });
        offset += (t.len() * 8) as u64;
    }
    let header = serde_json::to_vec(&Header { config: cfg.clone(), tensors: entries })
        .map_err(|e| ModelError::CheckpointFormat(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for t in params.tensors.values() {
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint<R: Read>(r: &mut R) -> Result<(ModelConfig, Parameters), ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::CheckpointFormat("bad magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| ModelError::CheckpointFormat(e.to_string()))?;

    let mut params = Parameters { tensors: Default::default() };
    let mut expected_offset = 0u64;
    for entry in &header.tensors {
        if entry.dtype != "f64" {
            return Err(ModelError::CheckpointFormat(format!(
                "tensor {} has unsupported dtype {}",
                entry.name, entry.dtype
            )));
        }
        if entry.offset != expected_offset {
            return Err(ModelError::CheckpointFormat(format!(
                "tensor {} offset {} != expected {expected_offset}",
                entry.name, entry.offset
            )));
        }
        let n: usize = entry.shape.iter().product();
        if n as u64 != entry.len {
            return Err(ModelError::CheckpointFormat(format!(
                "tensor {} shape/len mismatch",
                entry.name
            )));
        }
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        params
            .tensors
            .insert(entry.name.clone(), Tensor::from_vec(&entry.shape, data));
        expected_offset += entry.len * 8;
    }

    // shapes must agree with the config's shape function
    let shapes = tensor_shapes(&header.config);
    if shapes.len() != params.tensors.len() {
        return Err(ModelError::CheckpointFormat(format!(
            "checkpoint lists {} tensors, config implies {}",
            params.tensors.len(),
            shapes.len()
        )));
    }
    for (name, shape) in shapes {
        let t = params
            .tensors
            .get(&name)
            .ok_or_else(|| ModelError::CheckpointFormat(format!("tensor {name} missing")))?;
        if t.shape != shape {
            return Err(ModelError::CheckpointFormat(format!(
                "tensor {name} shape {:?} != expected {shape:?}",
                t.shape
            )));
        }
    }
    Ok((header.config, params))
}
