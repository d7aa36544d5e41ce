//! Server configuration, read from a TOML file.
//!
//! ```toml
//! http_addr = "127.0.0.1:8080"
//! watched_subchannel = 1
//! input = "tcp:127.0.0.1:7000"   # or "file:capture.dabs", or "none"
//! output_dir = "received"
//! pad_capacity = 58              # optional; PAD of another length is reported
//! afc_drift = 120
//! afc_tick_ms = 1000
//!
//! [defaults]
//! ensemble = "Campus DAB"
//! subchannel = 1
//! volume = 40
//!
//! [[ensembles]]
//! label = "Campus DAB"
//! subchannels = [1, 2]
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use dabxml_core::dabml::MAX_VOLUME;
use dabxml_core::frame::MAX_SUBCHANNEL_ID;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where transmission frames come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputSource {
    None,
    File(PathBuf),
    /// Listen here and read from each broadcaster that connects, one at a time.
    Tcp(SocketAddr),
}

impl FromStr for InputSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            _ if s == "none" => Ok(InputSource::None),
            Some(("file", path)) if !path.is_empty() => Ok(InputSource::File(PathBuf::from(path))),
            Some(("tcp", addr)) => addr.parse().map(InputSource::Tcp).map_err(|e| format!("bad address {addr:?}: {e}")),
            _ => Err(format!("input {s:?} is not none, file:<path> or tcp:<addr>")),
        }
    }
}

impl fmt::Display for InputSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputSource::None => f.write_str("none"),
            InputSource::File(path) => write!(f, "file:{}", path.display()),
            InputSource::Tcp(addr) => write!(f, "tcp:{addr}"),
        }
    }
}

impl<'de> Deserialize<'de> for InputSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub label: String,
    pub subchannels: BTreeSet<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefaultTuning {
    pub ensemble: String,
    pub subchannel: u8,
    pub volume: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_http_addr")]
    pub http_addr: SocketAddr,
    pub watched_subchannel: u8,
    #[serde(default = "default_input")]
    pub input: InputSource,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub pad_capacity: Option<usize>,
    #[serde(default)]
    pub afc_drift: i32,
    #[serde(default = "default_afc_tick_ms")]
    pub afc_tick_ms: u64,
    #[serde(default = "default_event_log_len")]
    pub event_log_len: usize,
    pub defaults: DefaultTuning,
    pub ensembles: Vec<EnsembleConfig>,
}

fn default_http_addr() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_input() -> InputSource {
    InputSource::None
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("received")
}

fn default_afc_tick_ms() -> u64 {
    1000
}

fn default_event_log_len() -> usize {
    1000
}

impl ServerConfig {
    /// A single-ensemble config used by tests and the bundled example.
    pub fn simple(ensemble: &str, subchannels: &[u8], watched_subchannel: u8) -> Self {
        Self {
            http_addr: default_http_addr(),
            watched_subchannel,
            input: InputSource::None,
            output_dir: default_output_dir(),
            pad_capacity: None,
            afc_drift: 0,
            afc_tick_ms: default_afc_tick_ms(),
            event_log_len: default_event_log_len(),
            defaults: DefaultTuning { ensemble: ensemble.to_owned(), subchannel: subchannels[0], volume: 40 },
            ensembles: vec![EnsembleConfig { label: ensemble.to_owned(), subchannels: subchannels.iter().copied().collect() }],
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        let config: Self = toml::from_str(&text)?;
        config.check()?;
        Ok(config)
    }

    pub fn afc_tick(&self) -> Duration {
        Duration::from_millis(self.afc_tick_ms.max(1))
    }

    pub fn ensemble(&self, label: &str) -> Option<&EnsembleConfig> {
        self.ensembles.iter().find(|e| e.label == label)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.watched_subchannel > MAX_SUBCHANNEL_ID {
            return invalid(format!("watched subchannel {} exceeds {MAX_SUBCHANNEL_ID}", self.watched_subchannel));
        }
        if self.ensembles.is_empty() {
            return invalid("no ensembles configured".into());
        }
        for (i, e) in self.ensembles.iter().enumerate() {
            if e.label.trim().is_empty() || e.subchannels.is_empty() {
                return invalid(format!("ensemble {i} needs a label and at least one subchannel"));
            }
            if let Some(id) = e.subchannels.iter().find(|&&id| id > MAX_SUBCHANNEL_ID) {
                return invalid(format!("ensemble {:?} lists subchannel {id}", e.label));
            }
            if self.ensembles[..i].iter().any(|other| other.label == e.label) {
                return invalid(format!("ensemble {:?} listed twice", e.label));
            }
        }
        let Some(ensemble) = self.ensemble(&self.defaults.ensemble) else {
            return invalid(format!("default ensemble {:?} is not configured", self.defaults.ensemble));
        };
        if !ensemble.subchannels.contains(&self.defaults.subchannel) {
            return invalid(format!("default subchannel {} is not in {:?}", self.defaults.subchannel, ensemble.label));
        }
        if self.defaults.volume > MAX_VOLUME {
            return invalid(format!("default volume {} exceeds {MAX_VOLUME}", self.defaults.volume));
        }
        if let Some(cap) = self.pad_capacity.filter(|c| !(1..=255).contains(c)) {
            return invalid(format!("PAD capacity {cap} outside 1..=255"));
        }
        if self.event_log_len == 0 {
            return invalid("event_log_len must be positive".into());
        }
        Ok(())
    }
}
