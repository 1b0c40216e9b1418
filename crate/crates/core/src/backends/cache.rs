use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::sha256_hex;

/// Content address of one backend response.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    backend: String,
    digest: String,
}

impl CacheKey {
    pub fn new(backend: &str, model_id: &str, payload: &impl Serialize) -> Self {
        let body = serde_json::json!({
            "backend": backend,
            "model": model_id,
            "payload": payload,
        });
        let bytes = serde_json::to_vec(&body).expect("payload serializes");
        Self {
            backend: backend.to_string(),
            digest: sha256_hex(&bytes),
        }
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// `{backend}/{2-char shard}/{digest}.json`
    pub fn relative_path(&self) -> PathBuf {
        let mut p = PathBuf::from(sanitize(&self.backend));
        p.push(&self.digest[..2]);
        p.push(format!("{}.json", self.digest));
        p
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Content-addressed response store. Always memoizes in memory; with a
/// directory it also persists one JSON file per key. Existing entries are
/// never overwritten.
#[derive(Debug)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<CacheKey, String>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            memory: Mutex::new(HashMap::new()),
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            memory: Mutex::new(HashMap::new()),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn load<T: DeserializeOwned>(&self, key: &CacheKey) -> io::Result<Option<T>> {
        let cached = self.memory.lock().unwrap().get(key).cloned();
        let raw = match cached {
            Some(raw) => raw,
            None => {
                let Some(dir) = &self.dir else {
                    return Ok(None);
                };
                match fs::read_to_string(dir.join(key.relative_path())) {
                    Ok(raw) => {
                        self.memory
                            .lock()
                            .unwrap()
                            .insert(key.clone(), raw.clone());
                        raw
                    }
                    Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
        };
        serde_json::from_str(&raw)
            .map(Some)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn store<T: Serialize>(&self, key: &CacheKey, value: &T) -> io::Result<()> {
        let raw = serde_json::to_string(value)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        if let Some(dir) = &self.dir {
            let path = dir.join(key.relative_path());
            if !path.exists() {
                let parent = path.parent().expect("cache path has a parent");
                fs::create_dir_all(parent)?;
                // Write to a unique temp file and rename so readers never see
                // a partial entry.
                let tmp = parent.join(format!(
                    ".{}.{:?}.tmp",
                    key.digest,
                    std::thread::current().id()
                ));
                let mut f = fs::File::create(&tmp)?;
                f.write_all(raw.as_bytes())?;
                f.sync_all()?;
                fs::rename(&tmp, &path)?;
            }
        }
        self.memory.lock().unwrap().insert(key.clone(), raw);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatResponse, RawNli};
    use proptest::prelude::*;

    #[test]
    fn key_is_stable_and_sharded() {
        let a = CacheKey::new("openai", "gpt", &"hello");
        let b = CacheKey::new("openai", "gpt", &"hello");
        assert_eq!(a, b);
        assert_ne!(a, CacheKey::new("openai", "gpt", &"hello!"));
        assert_ne!(a, CacheKey::new("mock", "gpt", &"hello"));
        let p = a.relative_path();
        let parts: Vec<_> = p.iter().map(|s| s.to_string_lossy().to_string()).collect();
        assert_eq!(parts[0], "openai");
        assert_eq!(parts[1], &a.digest()[..2]);
        assert_eq!(parts[2], format!("{}.json", a.digest()));
    }

    #[test]
    fn disk_round_trip_survives_new_instance() {
        let dir = tempfile::tempdir().unwrap();
        let key = CacheKey::new("mock", "m", &"req");
        let value = ChatResponse::text("answer");
        ResponseCache::on_disk(dir.path()).store(&key, &value).unwrap();
        let fresh = ResponseCache::on_disk(dir.path());
        assert_eq!(fresh.load::<ChatResponse>(&key).unwrap(), Some(value));
        assert!(dir.path().join(key.relative_path()).exists());
    }

    #[test]
    fn existing_entry_not_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let key = CacheKey::new("mock", "m", &"req");
        ResponseCache::on_disk(dir.path())
            .store(&key, &ChatResponse::text("first"))
            .unwrap();
        ResponseCache::on_disk(dir.path())
            .store(&key, &ChatResponse::text("second"))
            .unwrap();
        let got: ChatResponse = ResponseCache::on_disk(dir.path()).load(&key).unwrap().unwrap();
        assert_eq!(got.text, "first");
    }

    proptest! {
        #[test]
        fn nli_round_trip_is_bit_identical(e in 0.0f64..1.0, n in 0.0f64..1.0, c in 0.0f64..1.0) {
            let dir = tempfile::tempdir().unwrap();
            let key = CacheKey::new("nli", "m", &(e, n, c));
            let raw = RawNli::new(e, n, c);
            ResponseCache::on_disk(dir.path()).store(&key, &raw).unwrap();
            let got: RawNli = ResponseCache::on_disk(dir.path()).load(&key).unwrap().unwrap();
            prop_assert_eq!(got.entailment.to_bits(), e.to_bits());
            prop_assert_eq!(got.neutral.to_bits(), n.to_bits());
            prop_assert_eq!(got.contradiction.to_bits(), c.to_bits());
        }
    }
}
