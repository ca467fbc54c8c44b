//! The optional TOML config file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use symscreen_core::extract::DEFAULT_CHAR_LIMIT;
use symscreen_core::{BackendConfig, DEFAULT_SEED};

use crate::CliError;

pub const CONFIG_ENV: &str = "SYMSCREEN_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_char_limit")]
    pub char_limit: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_k() -> usize {
    5
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_char_limit() -> usize {
    DEFAULT_CHAR_LIMIT
}
fn default_parallelism() -> usize {
    4
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            k: default_k(),
            seed: default_seed(),
            char_limit: default_char_limit(),
            parallelism: default_parallelism(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSection {
    pub listen: Option<String>,
    pub static_dir: Option<PathBuf>,
    pub token: Option<String>,
    #[serde(default)]
    pub merge_gold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default)]
    pub defaults: Defaults,
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
    #[serde(default)]
    pub service: ServiceSection,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("symscreen-data")
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            data_dir: default_data_dir(),
            defaults: Defaults::default(),
            backends: Vec::new(),
            service: ServiceSection::default(),
        }
    }
}

impl CliConfig {
    /// Reads and validates a config file. Relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let mut config: CliConfig =
            toml::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if config.data_dir.is_relative() {
            config.data_dir = base.join(&config.data_dir);
        }
        if let Some(dir) = &mut config.service.static_dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mut seen = HashSet::new();
        for b in &self.backends {
            if !seen.insert(b.backend_id.as_str()) {
                return Err(CliError::Validation(format!("config: duplicate backend id `{}`", b.backend_id)));
            }
            b.validate().map_err(|e| CliError::Validation(format!("config: {e}")))?;
        }
        let d = &self.defaults;
        if d.k < 2 || d.char_limit == 0 || d.parallelism == 0 {
            return Err(CliError::Validation("config: defaults need k >= 2, char_limit >= 1, parallelism >= 1".into()));
        }
        Ok(())
    }

    /// Built-in backends (using the configured defaults) overlaid with the
    /// configured table.
    pub fn backend(&self, backend_id: &str) -> Option<BackendConfig> {
        if let Some(b) = self.backends.iter().find(|b| b.backend_id == backend_id) {
            return Some(b.clone());
        }
        BackendConfig::builtins().into_iter().find(|b| b.backend_id == backend_id).map(|mut b| {
            b.char_limit = self.defaults.char_limit;
            b.parallelism = self.defaults.parallelism;
            b.seed = self.defaults.seed;
            b
        })
    }

    pub fn backend_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = BackendConfig::builtins().into_iter().map(|b| b.backend_id).collect();
        ids.extend(self.backends.iter().map(|b| b.backend_id.clone()));
        ids.sort();
        ids.dedup();
        ids
    }
}
