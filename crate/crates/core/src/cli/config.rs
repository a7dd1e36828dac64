//! Tool configuration file (TOML).
//!
//! ```toml
//! [scoring]
//! truncation_limit = 2048
//!
//! [kto]
//! beta = 0.1
//! lambda_desired = 1.7
//!
//! [[backends]]
//! backend_id = "reference"
//! kind = "reference"
//! seed_file = "seed.txt"   # resolved relative to this file
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{BackendConfig, CounterKind};
use crate::error::{Error, Result};
use crate::kto::KtoConfig;
use crate::scoring::DEFAULT_TRUNCATION_LIMIT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringSection {
    pub truncation_limit: usize,
    /// Counter used for dataset truncation in `distill`.
    pub token_counter: CounterKind,
}

impl Default for ScoringSection {
    fn default() -> Self {
        ScoringSection {
            truncation_limit: DEFAULT_TRUNCATION_LIMIT,
            token_counter: CounterKind::Bytes,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolConfig {
    #[serde(default)]
    pub scoring: ScoringSection,
    #[serde(default)]
    pub kto: KtoConfig,
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
}

/// A parsed configuration plus what it was read from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ToolConfig,
    /// sha256 of the raw config bytes, or of the effective dump when no file
    /// was given.
    pub digest: String,
    /// Config file and any seed files it referenced.
    pub inputs: Vec<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl ToolConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<(Self, Vec<PathBuf>)> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut seeds = Vec::new();
        if let Some(toml::Value::Array(backends)) = table.get_mut("backends") {
            for b in backends.iter_mut().filter_map(toml::Value::as_table_mut) {
                let Some(seed) = b.remove("seed_file") else {
                    continue;
                };
                let rel = seed
                    .as_str()
                    .ok_or_else(|| Error::Config("seed_file must be a string".into()))?;
                let path = base_dir.join(rel);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                b.insert("seed_text".into(), toml::Value::String(text));
                seeds.push(path);
            }
        }
        let config: ToolConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok((config, seeds))
    }

    pub fn validate(&self) -> Result<()> {
        if self.scoring.truncation_limit == 0 {
            return Err(Error::Config(
                "scoring.truncation_limit must be positive".into(),
            ));
        }
        self.kto.validate()?;
        let mut seen = std::collections::HashSet::new();
        for b in &self.backends {
            b.validate()?;
            if !seen.insert(&b.backend_id) {
                return Err(Error::Config(format!(
                    "duplicate backend_id {:?}",
                    b.backend_id
                )));
            }
        }
        Ok(())
    }

    /// Human-readable effective configuration. Seed texts are summarized.
    pub fn dump(&self) -> String {
        let mut shown = self.clone();
        for b in &mut shown.backends {
            if let Some(seed) = &b.seed_text {
                b.seed_text = Some(format!(
                    "<{} bytes, sha256 {}>",
                    seed.len(),
                    &sha256_hex(seed.as_bytes())[..16]
                ));
            }
        }
        toml::to_string(&shown).unwrap_or_else(|e| format!("# unserializable config: {e}\n"))
    }

    pub fn backend_ids(&self) -> Vec<String> {
        self.backends.iter().map(|b| b.backend_id.clone()).collect()
    }
}

pub fn load_config(path: Option<&Path>) -> Result<LoadedConfig> {
    match path {
        None => {
            let config = ToolConfig::default();
            let digest = sha256_hex(config.dump().as_bytes());
            Ok(LoadedConfig {
                config,
                digest,
                inputs: Vec::new(),
            })
        }
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let text = std::str::from_utf8(&bytes)
                .map_err(|e| Error::Config(format!("{}: invalid UTF-8: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new("."));
            let (config, seeds) = ToolConfig::parse(text, base)?;
            let mut inputs = vec![path.to_path_buf()];
            inputs.extend(seeds);
            Ok(LoadedConfig {
                config,
                digest: sha256_hex(&bytes),
                inputs,
            })
        }
    }
}
