//! Node configuration file (TOML).
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! data_dir = "data"              # relative to this file; HALALTRACE_DATA_DIR overrides
//! round_interval_secs = 5        # round timer T, > 0 (fractions allowed)
//! batch_size = 100               # records per block B, >= 1
//!
//! [admin]
//! id = "admin"
//! public_key = "<64 hex chars>"
//!
//! [[validators]]
//! id = "validator-a"
//! stake = 1
//! key_path = "keys/validator-a.key"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use halaltrace_core::consensus::{StakeRegistry, Validator};
use halaltrace_core::crypto::{PublicKey, SecretKey};
use serde::{Deserialize, Deserializer, Serialize};

pub const DATA_DIR_ENV: &str = "HALALTRACE_DATA_DIR";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("key file {path}: {detail}")]
    Key { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdminConfig {
    pub id: String,
    pub public_key: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidatorConfig {
    pub id: String,
    pub stake: u64,
    pub key_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    #[serde(default = "default_interval", deserialize_with = "seconds")]
    pub round_interval_secs: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Fixed trace-id RNG seed, for reproducible test deployments.
    #[serde(default)]
    pub rng_seed: Option<u64>,
    pub admin: AdminConfig,
    pub validators: Vec<ValidatorConfig>,
}

fn default_listen() -> SocketAddr {
    "127.0.0.1:8080".parse().expect("valid default address")
}

fn default_interval() -> f64 {
    5.0
}

fn default_batch() -> usize {
    100
}

fn seconds<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        Int(i64),
        Float(f64),
    }
    Ok(match Num::deserialize(d)? {
        Num::Int(i) => i as f64,
        Num::Float(f) => f,
    })
}

/// Secret key file: 64 lowercase hex chars (the Ed25519 seed), optional trailing newline.
pub fn read_key_file(path: &Path) -> Result<SecretKey, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    SecretKey::from_hex(text.trim_end()).map_err(|e| ConfigError::Key { path: path.to_path_buf(), detail: e.to_string() })
}

/// Writes a secret key file readable only by the owner.
pub fn write_key_file(path: &Path, key: &SecretKey) -> Result<(), ConfigError> {
    let io = |source| ConfigError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut options = fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    std::os::unix::fs::OpenOptionsExt::mode(&mut options, 0o600);
    let mut file = options.open(path).map_err(io)?;
    std::io::Write::write_all(&mut file, format!("{}\n", key.to_hex()).as_bytes()).map_err(io)
}

impl NodeConfig {
    /// Parses `text`; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<NodeConfig, ConfigError> {
        let mut config: NodeConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.data_dir = base_dir.join(&config.data_dir);
        for v in &mut config.validators {
            v.key_path = base_dir.join(&v.key_path);
        }
        Ok(config)
    }

    /// Reads the file, applies the `HALALTRACE_DATA_DIR` override and validates.
    pub fn load(path: &Path) -> Result<NodeConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut config = Self::from_toml_str(&text, base)?;
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV).filter(|d| !d.is_empty()) {
            config.data_dir = PathBuf::from(dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn round_interval(&self) -> Duration {
        Duration::from_secs_f64(self.round_interval_secs)
    }

    /// Checks T > 0, B >= 1, a usable stake table and a writable data directory.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(self.round_interval_secs.is_finite() && self.round_interval_secs > 0.0) {
            return invalid("round_interval_secs must be > 0".into());
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be >= 1".into());
        }
        if self.validators.is_empty() {
            return invalid("at least one [[validators]] entry is required".into());
        }
        if self.validators.iter().map(|v| v.stake).sum::<u64>() == 0 {
            return invalid("total validator stake must be >= 1".into());
        }
        fs::create_dir_all(&self.data_dir).map_err(|source| ConfigError::Io { path: self.data_dir.clone(), source })?;
        let probe = self.data_dir.join(".write-probe");
        fs::write(&probe, b"").and_then(|_| fs::remove_file(&probe)).map_err(|source| ConfigError::Io { path: probe, source })?;
        Ok(())
    }

    /// Loads every validator key and builds the stake table.
    pub fn validator_set(&self) -> Result<(StakeRegistry, BTreeMap<String, SecretKey>), ConfigError> {
        let mut keys = BTreeMap::new();
        let mut validators = Vec::new();
        for v in &self.validators {
            let key = read_key_file(&v.key_path)?;
            validators.push(Validator { validator_id: v.id.clone(), public_key: key.public_key(), stake: v.stake });
            keys.insert(v.id.clone(), key);
        }
        let registry = StakeRegistry::new(validators).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok((registry, keys))
    }
}
