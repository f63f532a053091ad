use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use dsmcl::config::TrainConfig;

use crate::CliError;

/// Provenance record written next to every run's outputs. Holds no
/// timestamps so identical runs give identical manifests.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    /// Input path to its sha256 digest.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
    pub flags: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&TrainConfig>, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: config.map(TrainConfig::to_toml),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            flags: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn artifact(&mut self, name: &str, path: &Path) {
        self.artifacts.insert(name.to_string(), path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("serializable") + "\n";
        fs::write(path, text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}
