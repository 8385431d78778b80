//! Binary network checkpoints.
//!
//! Layout (little-endian): 8-byte magic, `u32` version, `u64` seed, `u64` step,
//! `u32` number of layer sizes, that many `u32` sizes, `u64` parameter count,
//! then the `f64` parameters in [`Mlp`] order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Mlp;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"JFLOWNET";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: u64,
}

pub fn write_checkpoint(path: &Path, net: &Mlp, meta: CheckpointMeta) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&meta.seed.to_le_bytes())?;
    w.write_all(&meta.step.to_le_bytes())?;
    w.write_all(&(net.dims().len() as u32).to_le_bytes())?;
    for &d in net.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&(net.num_params() as u64).to_le_bytes())?;
    for p in net.params() {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(Mlp, CheckpointMeta)> {
    let bad = |reason: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut r).map_err(|_| bad("truncated header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let seed = read_u64(&mut r).map_err(|_| bad("truncated header"))?;
    let step = read_u64(&mut r).map_err(|_| bad("truncated header"))?;
    let n_dims = read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(bad("implausible layer count"));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize);
    }
    let n_params = read_u64(&mut r).map_err(|_| bad("truncated header"))? as usize;
    let expected: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if n_params != expected {
        return Err(bad("parameter count does not match layer sizes"));
    }
    let mut params = Vec::with_capacity(n_params);
    let mut buf = [0u8; 8];
    for _ in 0..n_params {
        r.read_exact(&mut buf).map_err(|_| bad("truncated parameters"))?;
        params.push(f64::from_le_bytes(buf));
    }
    if r.read(&mut buf)? != 0 {
        return Err(bad("trailing bytes"));
    }
    let net = Mlp::from_params(&dims, params).map_err(|e| bad(&e.to_string()))?;
    Ok((net, CheckpointMeta { seed, step }))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
