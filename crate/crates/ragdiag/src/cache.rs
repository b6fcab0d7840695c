//! Append-only on-disk cache keyed by content hashes.
//!
//! Entries live in one JSONL file: `{"key": "...", "value": ...}` per line.
//! The whole file is loaded at open; reads are concurrent, writes are
//! serialized and appended immediately so warm-cache reruns are deterministic.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt cache line {line} in {path}: {source}")]
    Corrupt {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Serialize, Deserialize)]
struct Entry<V> {
    key: String,
    value: V,
}

/// Hex SHA-256 of the given parts joined with a NUL separator.
pub fn content_key(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0u8]);
        }
        hasher.update(part.as_bytes());
    }
    format!("{:x}", hasher.finalize())
}

pub struct DiskCache<V> {
    map: RwLock<HashMap<String, V>>,
    writer: Mutex<Option<File>>,
    path: Option<PathBuf>,
}

impl<V: Clone + Serialize + DeserializeOwned> DiskCache<V> {
    /// In-memory cache with no persistence.
    pub fn ephemeral() -> Self {
        Self {
            map: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            path: None,
        }
    }

    /// Opens (or creates) a persistent cache file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        let mut map = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|source| CacheError::Io {
                path: path.display().to_string(),
                source,
            })?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|source| CacheError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: Entry<V> =
                    serde_json::from_str(&line).map_err(|source| CacheError::Corrupt {
                        path: path.display().to_string(),
                        line: idx + 1,
                        source,
                    })?;
                map.insert(entry.key, entry.value);
            }
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|source| CacheError::Io {
                    path: parent.display().to_string(),
                    source,
                })?;
            }
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| CacheError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(Self {
            map: RwLock::new(map),
            writer: Mutex::new(Some(writer)),
            path: Some(path),
        })
    }

    pub fn get(&self, key: &str) -> Option<V> {
        self.map.read().unwrap().get(key).cloned()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.read().unwrap().contains_key(key)
    }

    pub fn put(&self, key: &str, value: V) -> Result<(), CacheError> {
        {
            let mut map = self.map.write().unwrap();
            if map.contains_key(key) {
                return Ok(());
            }
            map.insert(key.to_string(), value.clone());
        }
        let mut writer = self.writer.lock().unwrap();
        if let Some(file) = writer.as_mut() {
            let line = serde_json::to_string(&Entry {
                key: key.to_string(),
                value,
            })
            .expect("cache value serializes");
            writeln!(file, "{line}").map_err(|source| CacheError::Io {
                path: self
                    .path
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
                source,
            })?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let cache: DiskCache<Vec<f64>> = DiskCache::open(&path).unwrap();
            cache.put("k1", vec![1.0, 2.0]).unwrap();
        }
        let cache: DiskCache<Vec<f64>> = DiskCache::open(&path).unwrap();
        assert_eq!(cache.get("k1"), Some(vec![1.0, 2.0]));
    }

    #[test]
    fn content_key_separates_parts() {
        assert_ne!(content_key(&["ab", "c"]), content_key(&["a", "bc"]));
        assert_eq!(content_key(&["a", "b"]), content_key(&["a", "b"]));
    }
}
