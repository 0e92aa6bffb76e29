//! Binary checkpoint of the meta parameters.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "METAMF\0\x01"
//! header_len   u32
//! header       JSON     {"dims": .., "variant": .., "memory_budget": .., "meta": {..}}
//! n_tensors    u32
//! per tensor:  name_len u32, name (UTF-8), rows u64, cols u64, rows·cols × f64
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so save/load round-trips exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metanet::{MetaParams, ModelDims, Variant};
use crate::numkernel::Matrix;
use crate::wire::{Reader, Writer};

const MAGIC: &[u8; 8] = b"METAMF\0\x01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    dims: ModelDims,
    variant: Variant,
    memory_budget: u64,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

/// Checkpoint contents: parameters plus free-form string metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub theta: MetaParams,
    pub meta: BTreeMap<String, String>,
}

pub fn encode(theta: &MetaParams, meta: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        dims: theta.dims.clone(),
        variant: theta.variant,
        memory_budget: theta.memory_budget,
        meta: meta.clone(),
    })
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(header.len() as u32);
    w.bytes(&header);
    let named = theta.named_tensors();
    w.u32(named.len() as u32);
    for (name, t) in named {
        w.u32(name.len() as u32);
        w.bytes(name.as_bytes());
        w.u64(t.rows() as u64);
        w.u64(t.cols() as u64);
        w.f64s(t.as_slice());
    }
    Ok(w.finish())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, "checkpoint");
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a metamf checkpoint (bad magic)".into()));
    }
    let header_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let expected = header.dims.theta_shapes(header.variant);
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, configuration needs {}",
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in &expected {
        let name_len = r.u32()? as usize;
        let stored = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        if stored != name {
            return Err(Error::Checkpoint(format!(
                "expected tensor {name}, found {stored}"
            )));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        if (rows, cols) != *shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name} stored as {rows}x{cols}, expected {}x{}",
                shape.0, shape.1
            )));
        }
        tensors.push(Matrix::from_vec(rows, cols, r.f64s(rows * cols)?)?);
    }
    r.finish()?;
    let theta = MetaParams::from_tensors(header.dims, header.variant, header.memory_budget, tensors)?;
    Ok(Checkpoint {
        theta,
        meta: header.meta,
    })
}

pub fn save(path: &Path, theta: &MetaParams, meta: &BTreeMap<String, String>) -> Result<()> {
    std::fs::write(path, encode(theta, meta)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}
