use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{IclError, Strategy};
use crate::util::KeyHasher;
use crate::FORMAT_HEADER;

/// XXH64 over the length-prefixed encoding of the tuple.
pub fn cache_key(strategy: Strategy, prompt: &str, temperature: f64, seed: u64) -> u64 {
    KeyHasher::new(0)
        .str(strategy.as_str())
        .str(prompt)
        .f64(temperature)
        .u64(seed)
        .finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewriteCacheEntry {
    pub backend_id: String,
    pub completion: String,
    /// Unix seconds.
    pub created_at: u64,
    /// 16 lowercase hex digits.
    pub key: String,
}

impl RewriteCacheEntry {
    pub fn new(key: u64, completion: impl Into<String>, backend_id: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            completion: completion.into(),
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            key: format!("{key:016x}"),
        }
    }
}

/// Completion cache: an append-only JSONL log plus an in-memory index.
/// Lookups take a read lock; appends are serialized through the file mutex.
/// The first entry written for a key wins.
#[derive(Debug)]
pub struct RewriteCache {
    index: RwLock<HashMap<u64, RewriteCacheEntry>>,
    log: Mutex<Option<File>>,
    path: Option<PathBuf>,
}

impl RewriteCache {
    pub fn in_memory() -> Self {
        Self {
            index: RwLock::new(HashMap::new()),
            log: Mutex::new(None),
            path: None,
        }
    }

    /// Opens or creates the log. A torn final line left by a crash is
    /// dropped; any other malformed line is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, IclError> {
        let path = path.as_ref().to_path_buf();
        let err = |message: String| IclError::Cache {
            path: path.display().to_string(),
            message,
        };
        let mut index = HashMap::new();
        let mut valid_len = 0u64;
        let exists = path.exists();
        if exists {
            let file = File::open(&path).map_err(|e| err(e.to_string()))?;
            let mut reader = BufReader::new(file);
            let mut line = String::new();
            let mut line_no = 0;
            loop {
                line.clear();
                let n = reader.read_line(&mut line).map_err(|e| err(e.to_string()))?;
                if n == 0 {
                    break;
                }
                line_no += 1;
                if !line.ends_with('\n') {
                    break;
                }
                let body = line.trim_end_matches(['\n', '\r']);
                if line_no == 1 && body.starts_with("#laclip-kit") {
                    if body != FORMAT_HEADER {
                        return Err(err(format!("unsupported header {body:?}")));
                    }
                } else if !body.is_empty() {
                    match serde_json::from_str::<RewriteCacheEntry>(body) {
                        Ok(entry) => {
                            let key = u64::from_str_radix(&entry.key, 16)
                                .map_err(|_| err(format!("line {line_no}: bad key {:?}", entry.key)))?;
                            index.entry(key).or_insert(entry);
                        }
                        Err(e) => return Err(err(format!("line {line_no}: {e}"))),
                    }
                }
                valid_len += n as u64;
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| err(e.to_string()))?;
        if exists {
            file.set_len(valid_len).map_err(|e| err(e.to_string()))?;
        }
        if valid_len == 0 {
            writeln!(file, "{FORMAT_HEADER}").map_err(|e| err(e.to_string()))?;
        }
        Ok(Self {
            index: RwLock::new(index),
            log: Mutex::new(Some(file)),
            path: Some(path),
        })
    }

    pub fn get(&self, key: u64) -> Option<RewriteCacheEntry> {
        self.index.read().expect("cache lock").get(&key).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends the entry unless its key is already present. The log line is
    /// flushed before the index sees it.
    pub fn insert(&self, key: u64, entry: RewriteCacheEntry) -> Result<(), IclError> {
        let mut log = self.log.lock().expect("cache log lock");
        if self.index.read().expect("cache lock").contains_key(&key) {
            return Ok(());
        }
        if let Some(file) = log.as_mut() {
            let mut line = serde_json::to_string(&entry).expect("entry serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| IclError::Cache {
                    path: self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                    message: e.to_string(),
                })?;
        }
        self.index.write().expect("cache lock").insert(key, entry);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_separates_fields() {
        let a = cache_key(Strategy::Bard, "p", 0.9, 1);
        assert_ne!(a, cache_key(Strategy::Human, "p", 0.9, 1));
        assert_ne!(a, cache_key(Strategy::Bard, "p", 0.8, 1));
        assert_ne!(a, cache_key(Strategy::Bard, "p", 0.9, 2));
        assert_eq!(a, cache_key(Strategy::Bard, "p", 0.9, 1));
    }

    #[test]
    fn persists_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let c = RewriteCache::open(&path).unwrap();
            c.insert(7, RewriteCacheEntry::new(7, "hello", "b")).unwrap();
            c.insert(7, RewriteCacheEntry::new(7, "ignored", "b")).unwrap();
        }
        let mut text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        text.push_str("{\"backend_id\":\"b\",\"compl");
        std::fs::write(&path, &text).unwrap();

        let c = RewriteCache::open(&path).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get(7).unwrap().completion, "hello");
        c.insert(8, RewriteCacheEntry::new(8, "again", "b")).unwrap();
        drop(c);
        let c = RewriteCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn malformed_middle_line_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        std::fs::write(&path, "#laclip-kit v1\nnot json\n").unwrap();
        assert!(matches!(RewriteCache::open(&path), Err(IclError::Cache { .. })));
    }
}
