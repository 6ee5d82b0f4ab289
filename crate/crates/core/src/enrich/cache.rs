//! Append-only JSON Lines cache of video descriptions.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{DescriptionKey, VideoDescription};

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", .path.display())]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("cache already holds a description for {key} from another provider or prompt version")]
    DuplicateKey { key: DescriptionKey },
}

/// One line of the cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: DescriptionKey,
    pub description: String,
    pub provider_id: String,
    pub frame_count: usize,
    pub created_at: DateTime<Utc>,
    pub hash: String,
}

/// Content hash of (key, provider, prompt template version).
pub fn cache_hash(key: &DescriptionKey, provider_id: &str, template_version: &str) -> String {
    let material = format!(
        "{}\u{1f}{}\u{1f}{}\u{1f}{}\u{1f}{}",
        key.source_dataset, key.conversation_id, key.turn_index, provider_id, template_version
    );
    crate::jsonl::sha256_hex(material.as_bytes())
}

#[derive(Default)]
struct Index {
    by_hash: HashMap<String, CacheRecord>,
    by_key: HashMap<DescriptionKey, String>,
}

/// Thread-safe description cache. Reads share a lock; appends go through a
/// single writer. At most one description is stored per key.
pub struct DescriptionCache {
    path: Option<PathBuf>,
    index: RwLock<Index>,
    writer: Mutex<Option<File>>,
    pending: Mutex<HashSet<String>>,
    settled: Condvar,
}

impl DescriptionCache {
    pub fn in_memory() -> Self {
        DescriptionCache {
            path: None,
            index: RwLock::new(Index::default()),
            writer: Mutex::new(None),
            pending: Mutex::new(HashSet::new()),
            settled: Condvar::new(),
        }
    }

    /// Opens (creating if needed) a cache file and loads its records.
    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let io = |source| CacheError::Io { path: path.to_path_buf(), source };
        let mut index = Index::default();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |message: String| CacheError::Corrupt { path: path.to_path_buf(), line: i + 1, message };
                let record: CacheRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                if record.description.trim().is_empty() {
                    return Err(corrupt("empty description".into()));
                }
                if index.by_key.contains_key(&record.key) {
                    return Err(corrupt(format!("second record for {}", record.key)));
                }
                index.by_key.insert(record.key.clone(), record.hash.clone());
                index.by_hash.insert(record.hash.clone(), record);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(DescriptionCache {
            path: Some(path.to_path_buf()),
            index: RwLock::new(index),
            writer: Mutex::new(Some(file)),
            pending: Mutex::new(HashSet::new()),
            settled: Condvar::new(),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap_or_else(|e| e.into_inner()).by_hash.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, hash: &str) -> Option<VideoDescription> {
        self.index.read().unwrap_or_else(|e| e.into_inner()).by_hash.get(hash).map(VideoDescription::from)
    }

    pub fn get_by_key(&self, key: &DescriptionKey) -> Option<VideoDescription> {
        let index = self.index.read().unwrap_or_else(|e| e.into_inner());
        index.by_key.get(key).and_then(|h| index.by_hash.get(h)).map(VideoDescription::from)
    }

    pub fn records(&self) -> Vec<CacheRecord> {
        let index = self.index.read().unwrap_or_else(|e| e.into_inner());
        let mut out: Vec<CacheRecord> = index.by_hash.values().cloned().collect();
        out.sort_by(|a, b| a.key.cmp(&b.key));
        out
    }

    /// Appends a record. Inserting the same hash again is a no-op; a second
    /// record for a key under a different hash is refused.
    pub fn insert(&self, record: CacheRecord) -> Result<(), CacheError> {
        let mut index = self.index.write().unwrap_or_else(|e| e.into_inner());
        if let Some(existing) = index.by_key.get(&record.key) {
            if *existing == record.hash {
                return Ok(());
            }
            return Err(CacheError::DuplicateKey { key: record.key });
        }
        {
            let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
            if let (Some(file), Some(path)) = (writer.as_mut(), self.path.as_ref()) {
                let mut line = serde_json::to_vec(&record).expect("cache record serializes");
                line.push(b'\n');
                file.write_all(&line).and_then(|_| file.flush()).map_err(|source| CacheError::Io {
                    path: path.clone(),
                    source,
                })?;
            }
        }
        index.by_key.insert(record.key.clone(), record.hash.clone());
        index.by_hash.insert(record.hash.clone(), record);
        Ok(())
    }

    /// Marks `hash` as being fetched, waiting while another thread fetches
    /// it. Returns false once the hash is already cached.
    pub(crate) fn claim(&self, hash: &str) -> bool {
        let mut pending = self.pending.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if self.get(hash).is_some() {
                return false;
            }
            if pending.insert(hash.to_string()) {
                return true;
            }
            pending = self.settled.wait(pending).unwrap_or_else(|e| e.into_inner());
        }
    }

    pub(crate) fn release(&self, hash: &str) {
        self.pending.lock().unwrap_or_else(|e| e.into_inner()).remove(hash);
        self.settled.notify_all();
    }
}

impl From<&CacheRecord> for VideoDescription {
    fn from(r: &CacheRecord) -> Self {
        VideoDescription {
            key: r.key.clone(),
            description: r.description.clone(),
            provider_id: r.provider_id.clone(),
            frame_count: r.frame_count,
            created_at: r.created_at,
        }
    }
}
