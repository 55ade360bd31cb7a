//! Scaffolding for a single-machine deployment: fresh admin and validator
//! keys plus a `node.toml` that points at them.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use halaltrace_core::crypto::SecretKey;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::config::{write_key_file, AdminConfig, ConfigError, NodeConfig, ValidatorConfig};

pub const CONFIG_FILE: &str = "node.toml";
pub const ADMIN_ID: &str = "admin";

#[derive(Debug, Clone)]
pub struct DevnetOptions {
    pub listen: SocketAddr,
    pub validators: Vec<(String, u64)>,
    pub batch_size: usize,
    pub round_interval_secs: f64,
    /// Seeds key generation and trace ids; `None` draws keys from the OS.
    pub seed: Option<u64>,
}

impl Default for DevnetOptions {
    fn default() -> Self {
        DevnetOptions {
            listen: "127.0.0.1:8080".parse().expect("valid address"),
            validators: vec![("validator-a".into(), 1), ("validator-b".into(), 3)],
            batch_size: 100,
            round_interval_secs: 5.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Devnet {
    pub config_path: PathBuf,
    pub config: NodeConfig,
    pub admin_key_path: PathBuf,
    pub admin_key: SecretKey,
}

fn fresh_key(rng: &mut Option<ChaCha20Rng>) -> SecretKey {
    let mut seed = [0u8; 32];
    match rng {
        Some(r) => r.fill_bytes(&mut seed),
        None => rand::rng().fill_bytes(&mut seed),
    }
    SecretKey::from_seed(seed)
}

/// Writes `dir/node.toml`, `dir/keys/*.key` and an empty `dir/data`.
/// Refuses to overwrite an existing config.
pub fn init(dir: &Path, opts: &DevnetOptions) -> Result<Devnet, ConfigError> {
    let config_path = dir.join(CONFIG_FILE);
    if config_path.exists() {
        return Err(ConfigError::Invalid(format!("{} already exists", config_path.display())));
    }
    let mut rng = opts.seed.map(ChaCha20Rng::seed_from_u64);
    let admin_key = fresh_key(&mut rng);
    let admin_key_path = dir.join("keys").join(format!("{ADMIN_ID}.key"));
    write_key_file(&admin_key_path, &admin_key)?;

    let mut validators = Vec::new();
    for (id, stake) in &opts.validators {
        let rel = PathBuf::from("keys").join(format!("{id}.key"));
        write_key_file(&dir.join(&rel), &fresh_key(&mut rng))?;
        validators.push(ValidatorConfig { id: id.clone(), stake: *stake, key_path: rel });
    }
    let file_config = NodeConfig {
        listen: opts.listen,
        data_dir: PathBuf::from("data"),
        round_interval_secs: opts.round_interval_secs,
        batch_size: opts.batch_size,
        rng_seed: opts.seed,
        admin: AdminConfig { id: ADMIN_ID.into(), public_key: admin_key.public_key() },
        validators,
    };
    let text = toml::to_string_pretty(&file_config).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    fs::write(&config_path, text).map_err(|source| ConfigError::Io { path: config_path.clone(), source })?;

    let config = NodeConfig::from_toml_str(&fs::read_to_string(&config_path).map_err(|source| ConfigError::Io {
        path: config_path.clone(),
        source,
    })?, dir)?;
    config.validate()?;
    Ok(Devnet { config_path, config, admin_key_path, admin_key })
}
