//! Settings file and environment overrides.
//!
//! ```toml
//! [schedule]
//! steps = 1000
//!
//! [training]
//! triples = 500
//! [training.optimizer]
//! steps = 4000
//!
//! [catalog]
//! dir = "luts"
//!
//! [server]
//! bind = "127.0.0.1:8080"
//! store = "store"
//! checkpoint = "toy.gfdn"
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use gradeforge_diffuser::toy::ToyConfig;
use gradeforge_diffuser::{ScheduleConfig, DEFAULT_SAMPLING_STEPS};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ENV_STORE: &str = "GRADEFORGE_STORE";
pub const ENV_CHECKPOINT: &str = "GRADEFORGE_CHECKPOINT";
pub const ENV_BIND: &str = "GRADEFORGE_BIND";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub schedule: ScheduleConfig,
    pub training: ToyConfig,
    pub catalog: CatalogConfig,
    pub server: ServerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogConfig {
    /// Directory with `descriptions.toml` and one `.cube` per entry; the
    /// bundled looks when unset. Entries are resampled onto the model's
    /// lattice.
    pub dir: Option<PathBuf>,
    pub low_confidence: f64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig {
            dir: None,
            low_confidence: gradeforge_core::retouch::DEFAULT_LOW_CONFIDENCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub store: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub sampling_steps: usize,
    pub sample_hz: f64,
    /// Frame rate assumed for uploads that carry none.
    pub default_fps: f64,
    pub max_upload_bytes: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            store: PathBuf::from("gradeforge-store"),
            checkpoint: None,
            sampling_steps: DEFAULT_SAMPLING_STEPS,
            sample_hz: 1.0,
            default_fps: 24.0,
            max_upload_bytes: 1 << 30,
        }
    }
}

impl Config {
    /// Keys in `text` override the defaults one by one, so a partial
    /// table such as `[training.optimizer]` keeps the other defaults of
    /// its section.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(Config::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        base.try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The file at `path` if given, defaults otherwise, then environment
    /// overrides.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Config::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = get(ENV_STORE) {
            self.server.store = PathBuf::from(v);
        }
        if let Some(v) = get(ENV_CHECKPOINT) {
            self.server.checkpoint = Some(PathBuf::from(v));
        }
        if let Some(v) = get(ENV_BIND) {
            self.server.bind = v.parse().map_err(|e| Error::Config(format!("{ENV_BIND}={v}: {e}")))?;
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
