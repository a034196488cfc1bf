//! Content-addressed record/replay store for provider responses.
//!
//! One JSON file per request digest, sharded by the digest's first byte.
//! Entries are versioned so stale cache layouts fail loudly instead of
//! replaying garbage.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

const CACHE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    version: u32,
    kind: String,
    payload: serde_json::Value,
}

/// Filesystem-backed response cache; safe for concurrent writers because
/// entries are immutable once written and renames are atomic.
#[derive(Debug, Clone)]
pub struct ReplayCache {
    root: PathBuf,
}

impl ReplayCache {
    pub fn open(root: PathBuf) -> Result<Self, String> {
        fs::create_dir_all(&root).map_err(|e| format!("create cache dir {root:?}: {e}"))?;
        Ok(ReplayCache { root })
    }

    pub fn root(&self) -> &PathBuf {
        &self.root
    }

    fn entry_path(&self, digest: &str) -> PathBuf {
        let shard = &digest[..2.min(digest.len())];
        self.root.join(shard).join(format!("{digest}.json"))
    }

    pub fn get(&self, kind: &str, digest: &str) -> Result<Option<serde_json::Value>, String> {
        let path = self.entry_path(digest);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = fs::read(&path).map_err(|e| format!("read cache entry {path:?}: {e}"))?;
        let entry: CacheEntry =
            serde_json::from_slice(&bytes).map_err(|e| format!("decode cache entry {path:?}: {e}"))?;
        if entry.version != CACHE_VERSION {
            return Err(format!(
                "cache entry {path:?} has version {}, expected {CACHE_VERSION}",
                entry.version
            ));
        }
        if entry.kind != kind {
            return Err(format!(
                "cache entry {path:?} holds a `{}` response, requested `{kind}`",
                entry.kind
            ));
        }
        Ok(Some(entry.payload))
    }

    pub fn put(&self, kind: &str, digest: &str, payload: &serde_json::Value) -> Result<(), String> {
        let path = self.entry_path(digest);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| format!("create shard dir {parent:?}: {e}"))?;
        }
        let entry = CacheEntry {
            version: CACHE_VERSION,
            kind: kind.to_string(),
            payload: payload.clone(),
        };
        let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
        let bytes = serde_json::to_vec(&entry).map_err(|e| format!("encode cache entry: {e}"))?;
        fs::write(&tmp, bytes).map_err(|e| format!("write cache entry {tmp:?}: {e}"))?;
        fs::rename(&tmp, &path).map_err(|e| format!("commit cache entry {path:?}: {e}"))?;
        Ok(())
    }

    /// Number of entries currently stored.
    pub fn len(&self) -> usize {
        let mut count = 0;
        if let Ok(shards) = fs::read_dir(&self.root) {
            for shard in shards.flatten() {
                if let Ok(entries) = fs::read_dir(shard.path()) {
                    count += entries
                        .flatten()
                        .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                        .count();
                }
            }
        }
        count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::open(dir.path().to_path_buf()).unwrap();
        let digest = "ab".repeat(32);
        assert_eq!(cache.get("chat", &digest).unwrap(), None);
        let payload = serde_json::json!({"text": "hello", "finish_reason": "stop"});
        cache.put("chat", &digest, &payload).unwrap();
        assert_eq!(cache.get("chat", &digest).unwrap(), Some(payload));
        assert!(cache.get("embed", &digest).is_err());
        assert_eq!(cache.len(), 1);
    }
}
