//! Client profile: which node to talk to and who signs.
//!
//! ```toml
//! node_url = "http://127.0.0.1:8080"
//! stakeholder_id = "farm"
//! key_path = "keys/farm.key"   # relative to this file
//! ```

use std::path::{Path, PathBuf};

use halaltrace_core::crypto::SecretKey;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const NODE_URL_ENV: &str = "HALALTRACE_NODE_URL";
pub const PROFILE_ENV: &str = "HALALTRACE_PROFILE";
pub const DEFAULT_NODE_URL: &str = "http://127.0.0.1:8080";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stakeholder_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_path: Option<PathBuf>,
}

/// Signing identity taken from a profile.
pub struct Signer {
    pub id: String,
    pub key: SecretKey,
}

impl Profile {
    pub fn load(path: &Path) -> Result<Profile, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read profile {}: {e}", path.display())))?;
        let mut profile: Profile =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("profile {}: {e}", path.display())))?;
        if let (Some(key), Some(dir)) = (profile.key_path.as_mut(), path.parent()) {
            *key = dir.join(&*key);
        }
        Ok(profile)
    }

    pub fn signer(&self) -> Result<Signer, CliError> {
        let (Some(id), Some(path)) = (&self.stakeholder_id, &self.key_path) else {
            return Err(CliError::Usage(format!(
                "this command signs requests; set {PROFILE_ENV} or --profile to a profile with stakeholder_id and key_path"
            )));
        };
        let key = halaltrace_node::config::read_key_file(path).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(Signer { id: id.clone(), key })
    }
}

/// `--node` beats `HALALTRACE_NODE_URL` (clap merges both) beats the profile.
pub fn node_url(flag: Option<&str>, profile: &Profile) -> String {
    flag.map(String::from)
        .or_else(|| profile.node_url.clone())
        .unwrap_or_else(|| DEFAULT_NODE_URL.to_string())
        .trim_end_matches('/')
        .to_string()
}
