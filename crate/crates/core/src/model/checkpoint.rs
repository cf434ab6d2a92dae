//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "SASRCKPT"
//! version   u32
//! config    u32 length + UTF-8 JSON (ModelConfig)
//! meta      u32 length + UTF-8 JSON (CheckpointMeta)
//! count     u32
//! repeated: u32 name length, name, u32 rank, u64 dims[rank], f64 values
//! ```
//!
//! Parameter tensors come first in layout order; optional extra tensors
//! (optimizer moments) follow and carry a `state.` name prefix.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelError, ModelParams};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"SASRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const STATE_PREFIX: &str = "state.";

/// Training bookkeeping stored next to the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub step: u64,
    pub dev_loss: Option<f64>,
    pub seed: u64,
    pub optimizer_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub meta: CheckpointMeta,
    /// Extra named tensors, e.g. optimizer moments.
    pub state: Vec<(String, Tensor)>,
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_bytes(w: &mut impl Write, b: &[u8]) -> std::io::Result<()> {
    put_u32(w, b.len() as u32)?;
    w.write_all(b)
}

fn get_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_bytes(r: &mut impl Read) -> Result<Vec<u8>, ModelError> {
    let n = get_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn put_tensor(w: &mut impl Write, name: &str, t: &Tensor) -> std::io::Result<()> {
    put_bytes(w, name.as_bytes())?;
    put_u32(w, t.shape().len() as u32)?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_tensor(r: &mut impl Read) -> Result<(String, Tensor), ModelError> {
    let name = String::from_utf8(get_bytes(r)?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let rank = get_u32(r)? as usize;
    if rank > 8 {
        return Err(ModelError::Checkpoint(format!("{name}: implausible rank {rank}")));
    }
    let shape = (0..rank).map(|_| get_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    let t = Tensor::new(shape, data).map_err(|e| ModelError::Checkpoint(format!("{name}: {e}")))?;
    Ok((name, t))
}

impl Checkpoint {
    pub fn new(params: ModelParams, meta: CheckpointMeta) -> Self {
        Self { params, meta, state: Vec::new() }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), ModelError> {
        w.write_all(MAGIC)?;
        put_u32(&mut w, CHECKPOINT_VERSION)?;
        let cfg = serde_json::to_vec(self.params.config()).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        put_bytes(&mut w, &cfg)?;
        let meta = serde_json::to_vec(&self.meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        put_bytes(&mut w, &meta)?;
        put_u32(&mut w, (self.params.len() + self.state.len()) as u32)?;
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            put_tensor(&mut w, name, t)?;
        }
        for (name, t) in &self.state {
            put_tensor(&mut w, &format!("{STATE_PREFIX}{name}"), t)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::Checkpoint("not a checkpoint file".into()));
        }
        let version = get_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let config: ModelConfig =
            serde_json::from_slice(&get_bytes(&mut r)?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&get_bytes(&mut r)?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let count = get_u32(&mut r)? as usize;
        let mut named = Vec::with_capacity(count);
        let mut state = Vec::new();
        for _ in 0..count {
            let (name, t) = get_tensor(&mut r)?;
            match name.strip_prefix(STATE_PREFIX) {
                Some(rest) => state.push((rest.to_owned(), t)),
                None => named.push((name, t)),
            }
        }
        let params = ModelParams::from_parts(config, named)?;
        Ok(Self { params, meta, state })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}
