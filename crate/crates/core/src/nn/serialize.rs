//! Versioned little-endian binary model format.
//!
//! ```text
//! magic      8 bytes  "PAEEMDL\0"
//! version    u32
//! header     u32 length + UTF-8 JSON {"config", "seed", "meta"}
//! tensors    u32 count, then per tensor: u32 rows, u32 cols, rows·cols f64
//! ```
//!
//! Tensors appear in [`HybridModel::tensors`] order. Parameters are stored as
//! raw IEEE-754 bits, so a save/load cycle is bit-exact.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::model::{HybridModel, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PAEEMDL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    seed: u64,
    meta: serde_json::Value,
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{n} exceeds u32")))
}

/// Writes `model` with an arbitrary JSON `meta` payload.
pub fn save_model<W: Write>(mut w: W, model: &HybridModel, meta: &serde_json::Value) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    let header = Header {
        config: model.config.clone(),
        seed: model.seed,
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    write_u32(&mut w, to_u32(json.len())?)?;
    w.write_all(&json)?;
    let tensors = model.tensors();
    write_u32(&mut w, to_u32(tensors.len())?)?;
    for t in tensors {
        write_u32(&mut w, to_u32(t.rows())?)?;
        write_u32(&mut w, to_u32(t.cols())?)?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a model and its meta payload.
pub fn load_model<R: Read>(mut r: R) -> Result<(HybridModel, serde_json::Value)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {version}"
        )));
    }
    let len = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;

    let mut model = HybridModel::zeros(header.config)?;
    model.seed = header.seed;
    let count = read_u32(&mut r)? as usize;
    let mut tensors = model.tensors_mut();
    if count != tensors.len() {
        return Err(Error::Format(format!(
            "{count} tensors for an architecture with {}",
            tensors.len()
        )));
    }
    for t in tensors.iter_mut() {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        if (rows, cols) != t.shape() {
            return Err(Error::Format(format!(
                "tensor {rows}x{cols}, expected {:?}",
                t.shape()
            )));
        }
        let mut buf = [0u8; 8];
        for v in t.data_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    Ok((model, header.meta))
}
