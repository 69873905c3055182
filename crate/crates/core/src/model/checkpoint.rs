//! Binary checkpoints: `b"FFDL"`, then `version, N, d, V` as little-endian
//! `u32`, then every group (weight then bias) as little-endian `f64`,
//! row-major, in group order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{LayeredLm, ModelDims};

const MAGIC: &[u8; 4] = b"FFDL";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4;

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

impl LayeredLm {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.dims.param_count());
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.dims.layers as u32,
            self.dims.dim as u32,
            self.dims.vocab as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.groups.iter().flat_map(|g| g.values()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("missing FFDL header".into()));
        }
        let version = read_u32(bytes, 4);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dims = ModelDims {
            layers: read_u32(bytes, 8) as usize,
            dim: read_u32(bytes, 12) as usize,
            vocab: read_u32(bytes, 16) as usize,
        };
        dims.validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != 8 * dims.param_count() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                8 * dims.param_count(),
                body.len()
            )));
        }
        let flat: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        LayeredLm::unflatten(dims, &flat)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        LayeredLm::from_checkpoint_bytes(&bytes)
    }
}
