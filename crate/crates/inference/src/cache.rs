//! On-disk response cache keyed by endpoint, model and request body.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    key: String,
    stored_at: String,
    checksum: String,
    response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheHit {
    pub response: String,
    pub stored_at: String,
}

/// One JSON file per response, written to a temporary name and renamed into
/// place, so concurrent readers never see a partial entry.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

fn checksum(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

impl ResponseCache {
    pub fn new(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(Self {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(base_url: &str, model: &str, path: &str, body: &str) -> String {
        let mut h = Sha256::new();
        for part in [base_url, model, path, body] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    fn path_of(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    /// A stored response, or `None` on a miss. Unreadable or corrupted
    /// entries count as misses.
    pub fn get(&self, key: &str) -> Option<CacheHit> {
        let path = self.path_of(key);
        let text = fs::read_to_string(&path).ok()?;
        match serde_json::from_str::<Entry>(&text) {
            Ok(e) if e.key == key && e.checksum == checksum(&e.response) => Some(CacheHit {
                response: e.response,
                stored_at: e.stored_at,
            }),
            _ => {
                log::warn!("ignoring corrupted cache entry {}", path.display());
                None
            }
        }
    }

    /// Stores a response unless a valid entry already exists, and returns
    /// whichever entry is now on disk. When two workers race on one key the
    /// first write wins, so every reader sees the same `stored_at`.
    pub fn put(&self, key: &str, response: &str, stored_at: &str) -> std::io::Result<CacheHit> {
        let path = self.path_of(key);
        let parent = path.parent().expect("entry path has a parent");
        fs::create_dir_all(parent)?;
        let entry = Entry {
            key: key.to_string(),
            stored_at: stored_at.to_string(),
            checksum: checksum(response),
            response: response.to_string(),
        };
        let tmp = parent.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(serde_json::to_string(&entry).map_err(std::io::Error::other)?.as_bytes())?;
            f.sync_all()?;
        }
        let mine = CacheHit {
            response: entry.response,
            stored_at: entry.stored_at,
        };
        match fs::hard_link(&tmp, &path) {
            Ok(()) => {
                fs::remove_file(&tmp)?;
                Ok(mine)
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => match self.get(key) {
                Some(existing) => {
                    fs::remove_file(&tmp)?;
                    Ok(existing)
                }
                // a corrupted entry is replaced
                None => fs::rename(&tmp, &path).map(|()| mine),
            },
            // file systems without hard links
            Err(_) => fs::rename(&tmp, &path).map(|()| mine),
        }
    }

    /// Overwrites part of an entry's stored response; for corruption tests.
    #[doc(hidden)]
    pub fn corrupt(&self, key: &str) -> std::io::Result<()> {
        let path = self.path_of(key);
        let mut entry: Entry = serde_json::from_str(&fs::read_to_string(&path)?).map_err(std::io::Error::other)?;
        entry.response.push('x');
        fs::write(&path, serde_json::to_string(&entry).map_err(std::io::Error::other)?)
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|shards| {
                shards
                    .flatten()
                    .filter_map(|s| fs::read_dir(s.path()).ok())
                    .flat_map(|d| d.flatten())
                    .filter(|f| f.path().extension().is_some_and(|e| e == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let c = ResponseCache::new(dir.path()).unwrap();
        let k = ResponseCache::key("u", "m", "completions", "{}");
        assert!(c.get(&k).is_none());
        c.put(&k, r#"{"logprobs":1}"#, "t0").unwrap();
        let second = c.put(&k, r#"{"logprobs":2}"#, "t1").unwrap();
        assert_eq!(second.stored_at, "t0");
        assert_eq!(second.response, r#"{"logprobs":1}"#);
        assert_eq!(c.get(&k).unwrap().response, r#"{"logprobs":1}"#);
        assert_eq!(c.len(), 1);
        c.corrupt(&k).unwrap();
        assert!(c.get(&k).is_none());
        assert_ne!(k, ResponseCache::key("u", "m2", "completions", "{}"));
    }
}
