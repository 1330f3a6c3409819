use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use log::{info, warn};
use sha2::{Digest, Sha256};

use super::{stage, PipelineError};
use crate::corpus_io::model_io::{decode_model, encode_model};
use crate::corpus_io::{hex_digest, IoError, Model};

/// Environment variable naming the on-disk stage cache directory.
pub const CACHE_DIR_ENV: &str = "TDSV_CACHE_DIR";

/// Trained background models keyed by a content hash of everything that
/// determines them. Always memoized in memory; also persisted when a
/// directory is configured.
#[derive(Debug, Default)]
pub struct StageCache {
    dir: Option<PathBuf>,
    memory: HashMap<String, Model>,
}

impl StageCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            memory: HashMap::new(),
        }
    }

    pub fn from_env() -> Self {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => Self::with_dir(d),
            _ => Self::in_memory(),
        }
    }

    pub fn dir(&self) -> Option<&PathBuf> {
        self.dir.as_ref()
    }

    pub fn key(parts: &[&str]) -> String {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
        hex_digest(h)
    }

    pub fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.mdl")))
    }

    /// Memoizes `model` under `key` without touching the disk.
    pub fn insert(&mut self, key: String, model: Model) {
        self.memory.insert(key, model);
    }

    /// Returns the cached model for `key`, training and publishing it on a
    /// miss. Unreadable cache files are treated as misses.
    pub fn get_or_train(
        &mut self,
        key: &str,
        train: impl FnOnce() -> Result<Model, PipelineError>,
    ) -> Result<Model, PipelineError> {
        if let Some(m) = self.memory.get(key) {
            return Ok(m.clone());
        }
        if let Some(path) = self.path_for(key) {
            if let Ok(bytes) = fs::read(&path) {
                match decode_model(&bytes) {
                    Ok(m) => {
                        info!("stage cache hit {}", path.display());
                        self.memory.insert(key.to_string(), m.clone());
                        return Ok(m);
                    }
                    Err(e) => warn!("ignoring unreadable cache file {}: {e}", path.display()),
                }
            }
        }
        let model = train()?;
        if let Some(path) = self.path_for(key) {
            self.publish(&path, &model).map_err(stage("stage cache"))?;
        }
        self.memory.insert(key.to_string(), model.clone());
        Ok(model)
    }

    /// Write-then-rename so readers never observe a partial file.
    fn publish(&self, path: &PathBuf, model: &Model) -> Result<(), IoError> {
        let dir = path.parent().expect("cache files live in the cache directory");
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, encode_model(model)).map_err(|e| IoError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| IoError::io(path, e))
    }
}
