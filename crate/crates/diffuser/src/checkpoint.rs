//! Binary checkpoint container.
//!
//! Layout: the magic bytes `GFDN`, a little-endian `u32` format version, a
//! little-endian `u32` header length, a JSON header with the architecture
//! and schedule, then every parameter as a little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Denoiser, DenoiserConfig};
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GFDN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    architecture: DenoiserConfig,
    schedule: ScheduleConfig,
    param_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Denoiser<f32>,
    pub schedule: ScheduleConfig,
}

impl Checkpoint {
    pub fn new(model: Denoiser<f32>, schedule: ScheduleConfig) -> Self {
        Checkpoint { model, schedule }
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.schedule)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            architecture: self.model.config().clone(),
            schedule: self.schedule,
            param_count: self.model.param_count(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(12 + json.len() + 4 * header.param_count);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.model.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let weights = &bytes[12 + hlen..];
        if weights.len() != 4 * header.param_count {
            return Err(Error::Checkpoint(format!(
                "expected {} weight bytes, found {}",
                4 * header.param_count,
                weights.len()
            )));
        }
        let params = weights
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        NoiseSchedule::new(header.schedule)?;
        Ok(Checkpoint {
            model: Denoiser::from_params(header.architecture, params)?,
            schedule: header.schedule,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }
}
