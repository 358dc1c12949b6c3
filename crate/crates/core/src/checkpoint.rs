//! Checkpoint file format.
//!
//! ```text
//! magic   b"SANETCKPT"
//! version u32 LE (currently 1)
//! step    u64 LE (optimizer step counter)
//! cfg_len u32 LE, followed by the config as JSON
//! count   u32 LE, followed by `count` manifest entries:
//!         name_len u32, name bytes, dtype u8, ndim u32, dims u32...,
//!         offset u64 (bytes into the payload)
//! paylen  u64 LE, followed by the payload: little-endian f32 values
//! ```
//!
//! Payload scalars are always 32-bit floats regardless of the model's
//! in-memory precision. Loading rebuilds the model from the embedded config
//! and validates every tensor's shape against it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, SanetError};
use crate::network::{build, SANet, SANetConfig};
use crate::scalar::Scalar;

const MAGIC: &[u8; 9] = b"SANETCKPT";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> SanetError {
    SanetError::Checkpoint(msg.into())
}

pub fn save<T: Scalar>(path: &Path, model: &SANet<T>, step: u64) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&step.to_le_bytes())?;

    let cfg = serde_json::to_vec(&model.config)
        .map_err(|e| bad(format!("config serialization failed: {e}")))?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;

    let params = model.params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    let mut offset: u64 = 0;
    for p in &params {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[crate::scalar::DType::F32.code()])?;
        let shape = p.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&offset.to_le_bytes())?;
        offset += 4 * p.tensor.numel() as u64;
    }

    w.write_all(&offset.to_le_bytes())?;
    for p in &params {
        for v in p.tensor.data().iter() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct RawCheckpoint {
    step: u64,
    config: SANetConfig,
    entries: Vec<(String, Vec<usize>, u64)>,
    payload: Vec<u8>,
}

fn read_raw(path: &Path) -> Result<RawCheckpoint> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 9];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("{}: not a checkpoint (bad magic)", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let step = read_u64(&mut r)?;
    let cfg_len = read_u32(&mut r)? as usize;
    let mut cfg_buf = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_buf)?;
    let config: SANetConfig = serde_json::from_slice(&cfg_buf)
        .map_err(|e| bad(format!("config block unreadable: {e}")))?;

    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("non-utf8 tensor name"))?;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)?;
        if crate::scalar::DType::from_code(dtype[0]) != Some(crate::scalar::DType::F32) {
            return Err(bad(format!("tensor {name}: unsupported dtype {}", dtype[0])));
        }
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r)? as usize);
        }
        let offset = read_u64(&mut r)?;
        entries.push((name, shape, offset));
    }
    let paylen = read_u64(&mut r)? as usize;
    let mut payload = vec![0u8; paylen];
    r.read_exact(&mut payload)?;
    Ok(RawCheckpoint {
        step,
        config,
        entries,
        payload,
    })
}

/// Rebuilds the model recorded in a checkpoint. Returns the model and the
/// training-step counter.
pub fn load<T: Scalar>(path: &Path) -> Result<(SANet<T>, u64)> {
    let raw = read_raw(path)?;
    let model = build::<T>(&raw.config, 0)?;
    let params = model.params();
    if params.len() != raw.entries.len() {
        return Err(bad(format!(
            "checkpoint holds {} tensors but the config implies {}",
            raw.entries.len(),
            params.len()
        )));
    }
    for (p, (name, shape, offset)) in params.iter().zip(&raw.entries) {
        if &p.name != name {
            return Err(bad(format!(
                "tensor order mismatch: expected {}, found {}",
                p.name, name
            )));
        }
        if p.tensor.shape() != shape.as_slice() {
            return Err(bad(format!(
                "tensor {}: checkpoint shape {:?} does not match config shape {:?}",
                name,
                shape,
                p.tensor.shape()
            )));
        }
        let n = p.tensor.numel();
        let start = *offset as usize;
        let end = start + 4 * n;
        if end > raw.payload.len() {
            return Err(bad(format!("tensor {name}: payload out of bounds")));
        }
        let mut data = p.tensor.data_mut();
        for (i, chunk) in raw.payload[start..end].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            data[i] = T::from_f64(v as f64);
        }
    }
    Ok((model, raw.step))
}

/// Reads only the embedded config and step counter.
pub fn peek(path: &Path) -> Result<(SANetConfig, u64)> {
    let raw = read_raw(path)?;
    Ok((raw.config, raw.step))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
