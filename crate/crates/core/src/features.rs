use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::numerics::Tensor;

/// Token ids. `EOS` and `SC` are reserved; word tokens start at [`FIRST_WORD`].
pub type TokenId = usize;

pub const EOS: TokenId = 0;
pub const SC: TokenId = 1;
pub const FIRST_WORD: TokenId = 2;

pub fn is_delimiter(t: TokenId) -> bool {
    t == EOS || t == SC
}

/// Identifier of a speaker in the bank or an inventory.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeakerId(pub String);

impl SpeakerId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SpeakerId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for SpeakerId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// Acoustic input: `frames × dim` row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: usize,
    dim: usize,
    data: Vec<f64>,
}

const FEATURE_MAGIC: &[u8; 4] = b"SAFT";
const FEATURE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("feature data length {len} does not match {frames}x{dim}")]
    Shape { frames: usize, dim: usize, len: usize },
    #[error("feature value is not finite")]
    NonFinite,
    #[error("bad feature file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FeatureSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self, FeatureError> {
        if frames * dim != data.len() || dim == 0 {
            return Err(FeatureError::Shape { frames, dim, len: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite);
        }
        Ok(Self { frames, dim, data })
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        Self { frames, dim, data: vec![0.0; frames * dim] }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Concatenates groups of `k` consecutive frames, zero-padding the tail.
    /// Output has `ceil(frames / k)` rows of width `k * dim`.
    pub fn stack(&self, k: usize) -> Tensor {
        let k = k.max(1);
        let rows = self.frames.div_ceil(k);
        let mut out = vec![0.0; rows * k * self.dim];
        out[..self.data.len()].copy_from_slice(&self.data);
        Tensor::matrix(rows, k * self.dim, out).expect("stacked shape is consistent")
    }

    /// Mean over frames.
    pub fn mean_frame(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for t in 0..self.frames {
            m.iter_mut().zip(self.frame(t)).for_each(|(a, b)| *a += b);
        }
        let n = self.frames.max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), FeatureError> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&FEATURE_VERSION.to_le_bytes())?;
        w.write_all(&(self.frames as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, FeatureError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FEATURE_MAGIC {
            return Err(FeatureError::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FEATURE_VERSION {
            return Err(FeatureError::Format(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let frames = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let dim = u64::from_le_bytes(b8) as usize;
        let mut data = Vec::with_capacity(frames * dim);
        for _ in 0..frames * dim {
            r.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        Self::new(frames, dim, data)
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let mut buf = Vec::with_capacity(24 + 8 * self.data.len());
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}
