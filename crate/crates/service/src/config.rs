use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use symscreen_core::{BackendConfig, Corpus};

use crate::store::CORPORA_DIR;
use crate::ServiceError;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

fn default_listen() -> String {
    DEFAULT_LISTEN.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub data_dir: PathBuf,
    /// Extra backends; the built-in `keyword` and `mock` are always present
    /// unless redefined here.
    #[serde(default)]
    pub backends: Vec<BackendConfig>,
    /// Built review UI bundle served at `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    /// Shared bearer token required on `/api` routes when set.
    #[serde(default)]
    pub token: Option<String>,
    /// Overlay adjudications on the corpus gold instead of replacing it.
    #[serde(default)]
    pub merge_gold: bool,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            listen: default_listen(),
            data_dir: data_dir.into(),
            backends: Vec::new(),
            static_dir: None,
            token: None,
            merge_gold: false,
        }
    }

    /// Built-ins overlaid with configured backends, keyed by id.
    pub fn backend_table(&self) -> Result<BTreeMap<String, BackendConfig>, ServiceError> {
        let mut table: BTreeMap<String, BackendConfig> =
            BackendConfig::builtins().into_iter().map(|b| (b.backend_id.clone(), b)).collect();
        let mut seen = std::collections::HashSet::new();
        for b in &self.backends {
            if !seen.insert(b.backend_id.as_str()) {
                return Err(ServiceError::Invalid(format!("duplicate backend id `{}`", b.backend_id)));
            }
            b.validate().map_err(|e| ServiceError::Invalid(e.to_string()))?;
            table.insert(b.backend_id.clone(), b.clone());
        }
        Ok(table)
    }
}

/// Corpus refs name directories: ASCII letters, digits, `-`, `_` and `.`,
/// not starting with a dot.
pub fn valid_corpus_ref(r: &str) -> bool {
    !r.is_empty()
        && !r.starts_with('.')
        && r.len() <= 128
        && r.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Copies a validated corpus into the data directory under `corpus_ref`.
/// Installed corpora are immutable: an existing ref is an error.
pub fn install_corpus(data_dir: &Path, corpus_ref: &str, corpus: &Corpus) -> Result<PathBuf, ServiceError> {
    if !valid_corpus_ref(corpus_ref) {
        return Err(ServiceError::Invalid(format!("invalid corpus ref `{corpus_ref}`")));
    }
    let root = data_dir.join(CORPORA_DIR);
    let target = root.join(corpus_ref);
    if target.exists() {
        return Err(ServiceError::Conflict(format!("corpus `{corpus_ref}` already exists at {}", target.display())));
    }
    let staging = root.join(format!(".{corpus_ref}.partial"));
    let _ = std::fs::remove_dir_all(&staging);
    corpus.write_dir(&staging).map_err(|e| ServiceError::Internal(e.to_string()))?;
    std::fs::rename(&staging, &target).map_err(|e| ServiceError::Internal(format!("{}: {e}", target.display())))?;
    Ok(target)
}
