//! Checkpoint file format.
//!
//! Layout: magic bytes `EDMCKPT1`, then a length-prefixed list of
//! `(path string, shape, raw little-endian f64 payload)` entries for the
//! parameters, then optimizer moment state in the same layout (paths
//! `adam.m.*`, `adam.v.*`, plus a scalar `adam.step`), then one
//! length-prefixed UTF-8 metadata block of `key = value` lines that makes a
//! checkpoint self-describing.
//!
//! Serialization is bit-exact: save → load → save reproduces identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{EdmError, Result};

use super::adam::AdamState;
use super::params::{ParameterSet, Tensor};

pub const MAGIC: &[u8; 8] = b"EDMCKPT1";

/// Everything stored in a checkpoint file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterSet,
    pub adam: AdamState,
    /// Flat `key = value` metadata (model/schedule/scaling config,
    /// vocabulary, size distributions).
    pub metadata: String,
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_entry(w: &mut impl Write, path: &str, shape: &[usize], values: &[f64]) -> Result<()> {
    write_u64(w, path.len() as u64)?;
    w.write_all(path.as_bytes())?;
    write_u64(w, shape.len() as u64)?;
    for &d in shape {
        write_u64(w, d as u64)?;
    }
    write_u64(w, values.len() as u64)?;
    for &v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_entry(r: &mut impl Read) -> Result<(String, Vec<usize>, Vec<f64>)> {
    let path_len = read_u64(r)? as usize;
    let mut path_bytes = vec![0u8; path_len];
    r.read_exact(&mut path_bytes)?;
    let path = String::from_utf8(path_bytes)
        .map_err(|e| EdmError::Checkpoint(format!("non-UTF-8 parameter path: {e}")))?;
    let ndim = read_u64(r)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u64(r)? as usize);
    }
    let numel = read_u64(r)? as usize;
    if shape.iter().product::<usize>() != numel {
        return Err(EdmError::Checkpoint(format!(
            "entry `{path}`: shape {shape:?} does not match payload length {numel}"
        )));
    }
    let mut values = Vec::with_capacity(numel);
    let mut buf = [0u8; 8];
    for _ in 0..numel {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok((path, shape, values))
}

pub fn save_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u64(w, ckpt.params.len() as u64)?;
    for (path, t) in ckpt.params.iter() {
        write_entry(w, path, &t.shape, &t.values)?;
    }
    let n_moments = 2 * ckpt.adam.m.len() as u64 + 1;
    write_u64(w, n_moments)?;
    write_entry(w, "adam.step", &[], &[ckpt.adam.step as f64])?;
    for (path, m) in &ckpt.adam.m {
        write_entry(w, &format!("adam.m.{path}"), &[m.len()], m)?;
    }
    for (path, v) in &ckpt.adam.v {
        write_entry(w, &format!("adam.v.{path}"), &[v.len()], v)?;
    }
    write_u64(w, ckpt.metadata.len() as u64)?;
    w.write_all(ckpt.metadata.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(EdmError::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let n_params = read_u64(r)?;
    let mut params = ParameterSet::new();
    for _ in 0..n_params {
        let (path, shape, values) = read_entry(r)?;
        params.insert(&path, Tensor::new(shape, values));
    }
    let n_moments = read_u64(r)?;
    let mut adam = AdamState::new();
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for _ in 0..n_moments {
        let (path, _shape, values) = read_entry(r)?;
        if path == "adam.step" {
            adam.step = values[0] as u64;
        } else if let Some(p) = path.strip_prefix("adam.m.") {
            m.insert(p.to_string(), values);
        } else if let Some(p) = path.strip_prefix("adam.v.") {
            v.insert(p.to_string(), values);
        } else {
            return Err(EdmError::Checkpoint(format!("unexpected moment entry `{path}`")));
        }
    }
    adam.m = m;
    adam.v = v;
    let meta_len = read_u64(r)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)?;
    let metadata = String::from_utf8(meta_bytes)
        .map_err(|e| EdmError::Checkpoint(format!("non-UTF-8 metadata: {e}")))?;
    Ok(Checkpoint { params, adam, metadata })
}
