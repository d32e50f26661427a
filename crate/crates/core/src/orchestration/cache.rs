use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::OrchestrationError;

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub sha256: String,
    pub dim: usize,
    pub vector: Vec<f64>,
}

/// Content-hash keyed embeddings, optionally backed by an append-only
/// JSON-lines file.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: HashMap<String, Vec<f64>>,
    path: Option<PathBuf>,
    file: Option<File>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists; new entries are appended to it.
    pub fn open(path: &Path) -> Result<Self, OrchestrationError> {
        let io = |e: std::io::Error| OrchestrationError::Cache(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(io)?;
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let rec: CacheRecord = serde_json::from_str(line)
                    .map_err(|e| OrchestrationError::Cache(format!("{} line {}: {e}", path.display(), n + 1)))?;
                if rec.vector.len() != rec.dim {
                    return Err(OrchestrationError::Cache(format!(
                        "{} line {}: dim {} but {} values",
                        path.display(),
                        n + 1,
                        rec.dim,
                        rec.vector.len()
                    )));
                }
                entries.insert(rec.sha256, rec.vector);
            }
        }
        Ok(EmbeddingCache {
            entries,
            path: Some(path.to_path_buf()),
            file: None,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<&[f64]> {
        self.entries.get(&sha256_hex(text)).map(Vec::as_slice)
    }

    pub fn insert(&mut self, text: &str, vector: Vec<f64>) -> Result<(), OrchestrationError> {
        let key = sha256_hex(text);
        if let Some(path) = &self.path {
            if self.file.is_none() {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).map_err(|e| OrchestrationError::Cache(e.to_string()))?;
                }
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| OrchestrationError::Cache(format!("{}: {e}", path.display())))?;
                self.file = Some(f);
            }
            let rec = CacheRecord {
                sha256: key.clone(),
                dim: vector.len(),
                vector: vector.clone(),
            };
            let line = serde_json::to_string(&rec).expect("record serializes") + "\n";
            self.file
                .as_mut()
                .expect("opened above")
                .write_all(line.as_bytes())
                .map_err(|e| OrchestrationError::Cache(e.to_string()))?;
        }
        self.entries.insert(key, vector);
        Ok(())
    }
}
