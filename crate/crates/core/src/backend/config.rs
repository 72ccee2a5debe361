//! Device configuration.
//!
//! The file format is TOML with these keys, all optional:
//!
//! ```toml
//! devices = 2                       # number of emulated devices
//! arena_bytes = 1073741824          # per-device arena capacity
//! latency_us = 50.0                 # timing model: per-request latency
//! bandwidth_bytes_per_s = 6.0e9     # timing model: sustained bandwidth
//! realistic_timing = false          # sleep so wall-clock follows the model
//! ```
//!
//! The timing model is installed only when both `latency_us` and
//! `bandwidth_bytes_per_s` are present. `STREAMFORGE_DEVICES` overrides
//! `devices` when read through [`RuntimeConfig::from_env`].

use std::path::Path;

use serde::Deserialize;

use super::timing::{TimingModel, TimingSettings};
use crate::error::{Error, Result};

pub const DEFAULT_ARENA_BYTES: usize = 1 << 30;
pub const DEVICES_ENV: &str = "STREAMFORGE_DEVICES";

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    pub devices: usize,
    pub arena_bytes: usize,
    pub timing: TimingSettings,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig { devices: 1, arena_bytes: DEFAULT_ARENA_BYTES, timing: TimingSettings::default() }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    devices: Option<usize>,
    arena_bytes: Option<usize>,
    latency_us: Option<f64>,
    bandwidth_bytes_per_s: Option<f64>,
    realistic_timing: Option<bool>,
}

impl RuntimeConfig {
    pub fn with_devices(devices: usize) -> Self {
        RuntimeConfig { devices, ..Default::default() }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = RuntimeConfig::default();
        if let Some(d) = file.devices {
            cfg.devices = d;
        }
        if let Some(a) = file.arena_bytes {
            cfg.arena_bytes = a;
        }
        cfg.timing.realistic = file.realistic_timing.unwrap_or(false);
        cfg.timing.model = match (file.latency_us, file.bandwidth_bytes_per_s) {
            (Some(l), Some(b)) => Some(TimingModel::new(l, b)),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "latency_us and bandwidth_bytes_per_s must be given together".into(),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Defaults with the device count taken from `STREAMFORGE_DEVICES`.
    pub fn from_env() -> Result<Self> {
        let mut cfg = RuntimeConfig::default();
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(DEVICES_ENV) {
            self.devices = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{DEVICES_ENV}={v:?} is not a device count")))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(m) = self.timing.model {
            if !(m.latency_us >= 0.0 && m.bandwidth_bytes_per_s > 0.0) {
                return Err(Error::Config(format!("invalid timing model {m:?}")));
            }
        }
        Ok(())
    }
}
