//! Append-only response cache: one JSON file per (validator, model, prompt) key.

use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::FORMAT_VERSION;
use crate::error::StoreError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub format_version: u32,
    pub validator: String,
    pub model: String,
    pub prompt_hash: String,
    pub raw_response: String,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(validator: &str, model: &str, prompt_hash: &str) -> String {
        let mut h = Sha256::new();
        for part in [validator, model, prompt_hash] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, validator: &str, model: &str, prompt_hash: &str) -> Option<String> {
        let path = self.path_for(&Self::key(validator, model, prompt_hash));
        let text = fs::read_to_string(path).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        (entry.validator == validator && entry.model == model && entry.prompt_hash == prompt_hash)
            .then_some(entry.raw_response)
    }

    /// Stores a response unless an entry already exists; existing entries
    /// are never overwritten.
    pub fn put(
        &self,
        validator: &str,
        model: &str,
        prompt_hash: &str,
        raw_response: &str,
    ) -> Result<(), StoreError> {
        let path = self.path_for(&Self::key(validator, model, prompt_hash));
        let entry = CacheEntry {
            format_version: FORMAT_VERSION,
            validator: validator.to_string(),
            model: model.to_string(),
            prompt_hash: prompt_hash.to_string(),
            raw_response: raw_response.to_string(),
        };
        let body = serde_json::to_vec(&entry)?;
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => f
                .write_all(&body)
                .and_then(|_| f.sync_data())
                .map_err(|e| StoreError::io(&path, e)),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Ok(()),
            Err(e) => Err(StoreError::io(&path, e)),
        }
    }
}
