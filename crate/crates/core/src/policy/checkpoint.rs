//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `SDCPCKPT`, format version `u32`, config hash
//! `u64`, training step `u64`, layer count `u32`, then `(in, out)` as `u32`
//! pairs for the trunk, action head and value head in that order, log-std
//! count `u32`, parameter count `u64`, and every parameter as `f64` in storage
//! order (weights row-major, one row per output unit, then biases).

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{PolicyParameters, PolicyShape, ACTION_DIM};
use crate::real::Real;

const MAGIC: &[u8; 8] = b"SDCPCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Real> {
    pub params: PolicyParameters<T>,
    pub train_step: u64,
    pub config_hash: u64,
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn write_checkpoint<T: Real>(w: &mut impl Write, ckpt: &Checkpoint<T>) -> io::Result<()> {
    let layout = &ckpt.params.layout;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&ckpt.config_hash.to_le_bytes())?;
    w.write_all(&ckpt.train_step.to_le_bytes())?;
    let layers: Vec<_> = layout.dense_layers().collect();
    w.write_all(&(layers.len() as u32).to_le_bytes())?;
    for s in layers {
        w.write_all(&(s.in_dim as u32).to_le_bytes())?;
        w.write_all(&(s.out_dim as u32).to_le_bytes())?;
    }
    w.write_all(&(ACTION_DIM as u32).to_le_bytes())?;
    w.write_all(&(ckpt.params.data.len() as u64).to_le_bytes())?;
    for v in &ckpt.params.data {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Real>(r: &mut impl Read) -> Result<Checkpoint<T>, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let config_hash = read_u64(r)?;
    let train_step = read_u64(r)?;
    let n_layers = read_u32(r)? as usize;
    if !(2..=64).contains(&n_layers) {
        return Err(CheckpointError::Malformed(format!("{n_layers} layers")));
    }
    let dims = (0..n_layers)
        .map(|_| Ok((read_u32(r)? as usize, read_u32(r)? as usize)))
        .collect::<io::Result<Vec<_>>>()?;
    let trunk = &dims[..n_layers - 2];
    let (action, value) = (dims[n_layers - 2], dims[n_layers - 1]);
    let input = trunk.first().map_or(action.0, |d| d.0);
    let chained = trunk.windows(2).all(|w| w[0].1 == w[1].0);
    let last = trunk.last().map_or(input, |d| d.1);
    if !chained || action != (last, ACTION_DIM) || value != (last, 1) {
        return Err(CheckpointError::Malformed(format!("inconsistent layer shapes {dims:?}")));
    }
    let n_log_std = read_u32(r)? as usize;
    if n_log_std != ACTION_DIM {
        return Err(CheckpointError::Malformed(format!("{n_log_std} log-std values")));
    }
    let shape = PolicyShape {
        input,
        hidden: trunk.iter().map(|d| d.1).collect(),
    };
    let n_params = read_u64(r)? as usize;
    let expected = super::Layout::new(&shape).len;
    if n_params != expected {
        return Err(CheckpointError::Malformed(format!(
            "{n_params} parameters, shapes need {expected}"
        )));
    }
    let mut data = Vec::with_capacity(n_params);
    let mut b = [0u8; 8];
    for _ in 0..n_params {
        r.read_exact(&mut b)?;
        let v = f64::from_le_bytes(b);
        if !v.is_finite() {
            return Err(CheckpointError::Malformed("non-finite parameter".into()));
        }
        data.push(T::lit(v));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    let params = PolicyParameters::from_data(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    Ok(Checkpoint {
        params,
        train_step,
        config_hash,
    })
}

pub fn save_checkpoint<T: Real>(path: &Path, ckpt: &Checkpoint<T>) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ckpt)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>, CheckpointError> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}
