use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// How a client uses its cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheMode {
    /// Read hits, write misses after a successful request.
    #[default]
    ReadWrite,
    /// Read hits; a miss is a hard error and no request is ever sent.
    ReplayOnly,
    /// Bypass the cache entirely.
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model: String,
    pub response: String,
    /// Seconds since the Unix epoch.
    pub created_at: i64,
}

/// Content-addressed response store: one JSON file per key digest, sharded
/// by the digest's first two hex characters. Writes go through a temp file
/// and an atomic rename so concurrent readers never observe partial entries.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Digest of a canonical JSON key description.
    pub fn key_for(description: &serde_json::Value) -> String {
        let bytes = serde_json::to_vec(description).expect("json value serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        let shard = key.get(..2).unwrap_or("__");
        self.root.join(shard).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> io::Result<Option<CacheEntry>> {
        match fs::read(self.path_for(key)) {
            Ok(bytes) => {
                let entry: CacheEntry =
                    serde_json::from_slice(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                Ok(Some(entry))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, entry: &CacheEntry) -> io::Result<()> {
        let path = self.path_for(&entry.key);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer(&mut tmp, entry).map_err(io::Error::other)?;
        tmp.write_all(b"\n")?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }

    /// Number of entries on disk.
    pub fn len(&self) -> usize {
        let Ok(shards) = fs::read_dir(&self.root) else {
            return 0;
        };
        shards
            .filter_map(Result::ok)
            .filter_map(|s| fs::read_dir(s.path()).ok())
            .flat_map(|d| d.filter_map(Result::ok))
            .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
