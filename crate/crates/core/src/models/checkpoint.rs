//! Model checkpoints: `PREP` magic, version `u32`, JSON header length `u64`,
//! the JSON header, parameter count `u64`, then the flat parameters as
//! little-endian `f32`. Parameters are rounded to `f32` on save.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Architecture, ProbeModel};
use crate::dataset::{MAGIC, VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    widths: Vec<usize>,
    num_classes: usize,
    feature_dim: usize,
    dropout_rate: f64,
}

impl ProbeModel {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let header = Header {
            widths: self.architecture.hidden.clone(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
            dropout_rate: self.architecture.dropout_rate,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let params = self.params_flat();
        let mut out = Vec::with_capacity(24 + json.len() + 4 * params.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let take = |range: std::ops::Range<usize>| {
            bytes
                .get(range)
                .ok_or_else(|| Error::Format("truncated checkpoint".into()))
        };
        if take(0..4)? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(take(4..8)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let json_len = u64::from_le_bytes(take(8..16)?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(take(16..16 + json_len)?)?;
        let at = 16 + json_len;
        let count = u64::from_le_bytes(take(at..at + 8)?.try_into().unwrap()) as usize;
        let payload = take(at + 8..at + 8 + 4 * count)?;
        if bytes.len() != at + 8 + 4 * count {
            return Err(Error::SizeMismatch {
                expected: (at + 8 + 4 * count) as u64,
                found: bytes.len() as u64,
            });
        }
        let params: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let arch = Architecture {
            hidden: header.widths,
            dropout_rate: header.dropout_rate,
        };
        let mut model = ProbeModel::zeros(&arch, header.feature_dim, header.num_classes)?;
        model.set_params_flat(&params)?;
        Ok(model)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
