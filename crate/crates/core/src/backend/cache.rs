//! On-disk response cache: one JSON document per key.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BackendConfig;
use crate::fsutil::write_atomic;
use crate::prompting::RenderedPrompt;

/// SHA-256 over (kind, model, temperature, system message, user message).
pub fn cache_key(config: &BackendConfig, prompt: &RenderedPrompt) -> String {
    let mut h = Sha256::new();
    for part in [
        config.kind.as_str(),
        config.model_name.as_str(),
        &format!("{:?}", config.temperature),
        prompt.system_message.as_str(),
        prompt.user_message.as_str(),
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: String,
    kind: String,
    model_name: String,
    temperature: f64,
    candidate_raw: String,
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir.as_ref())?;
        Ok(Self {
            dir: dir.as_ref().to_path_buf(),
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Stored raw response, if present and readable. Corrupt entries are
    /// treated as misses.
    pub fn get(&self, key: &str) -> Option<String> {
        let text = std::fs::read_to_string(self.path(key)).ok()?;
        match serde_json::from_str::<Entry>(&text) {
            Ok(e) if e.key == key => Some(e.candidate_raw),
            _ => {
                log::warn!("ignoring unreadable cache entry {key}");
                None
            }
        }
    }

    pub fn put(&self, key: &str, config: &BackendConfig, raw: &str) -> std::io::Result<()> {
        let entry = Entry {
            key: key.to_string(),
            kind: config.kind.as_str().to_string(),
            model_name: config.model_name.clone(),
            temperature: config.temperature,
            candidate_raw: raw.to_string(),
        };
        let bytes = serde_json::to_vec_pretty(&entry).map_err(std::io::Error::other)?;
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        write_atomic(self.path(key), &bytes)
    }
}
