//! Append-only JSONL response cache keyed by content hashes.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key_hash: String,
    raw_output: String,
}

/// Hash of the given parts, unambiguous with respect to part boundaries.
pub fn key_hash(parts: &[&str]) -> String {
    let encoded = serde_json::to_string(parts).expect("strings always serialize");
    hex::encode(Sha256::digest(encoded.as_bytes()))
}

/// In-memory map backed by an optional file. File problems never fail a
/// lookup or insert; they are logged and the cache keeps working in memory.
#[derive(Debug, Default)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    state: Mutex<State>,
    ready: Condvar,
    file: Mutex<Option<File>>,
}

#[derive(Debug, Default)]
struct State {
    entries: HashMap<String, String>,
    /// Keys currently being computed by some caller.
    pending: HashSet<String>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads existing entries from `path` and appends new ones to it.
    pub fn open(path: &Path) -> Self {
        let mut entries = HashMap::new();
        if let Ok(f) = File::open(path) {
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = match line {
                    Ok(l) => l,
                    Err(e) => {
                        tracing::warn!(path = %path.display(), "stopped reading cache: {e}");
                        break;
                    }
                };
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Entry>(&line) {
                    Ok(e) => {
                        entries.insert(e.key_hash, e.raw_output);
                    }
                    Err(e) => tracing::warn!(path = %path.display(), line = n + 1, "skipping cache line: {e}"),
                }
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            if let Err(e) = std::fs::create_dir_all(dir) {
                tracing::warn!(path = %dir.display(), "cannot create cache directory: {e}");
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| tracing::warn!(path = %path.display(), "cache is memory-only: {e}"))
            .ok();
        Self {
            path: Some(path.to_path_buf()),
            state: Mutex::new(State {
                entries,
                pending: HashSet::new(),
            }),
            ready: Condvar::new(),
            file: Mutex::new(file),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.state.lock().expect("cache lock poisoned").entries.get(key).cloned()
    }

    /// Returns the cached value or runs `compute` and stores its result.
    /// Concurrent callers with the same key wait for the first one, so a
    /// key is computed at most once unless the computation fails.
    pub fn get_or_compute<E>(&self, key: &str, compute: impl FnOnce() -> Result<String, E>) -> Result<String, E> {
        {
            let mut state = self.state.lock().expect("cache lock poisoned");
            loop {
                if let Some(hit) = state.entries.get(key) {
                    return Ok(hit.clone());
                }
                if !state.pending.contains(key) {
                    state.pending.insert(key.to_string());
                    break;
                }
                state = self.ready.wait(state).expect("cache lock poisoned");
            }
        }
        let result = compute();
        if let Ok(value) = &result {
            self.insert(key.to_string(), value.clone());
        }
        self.state.lock().expect("cache lock poisoned").pending.remove(key);
        self.ready.notify_all();
        result
    }

    pub fn insert(&self, key: String, raw_output: String) {
        let mut file = self.file.lock().expect("cache lock poisoned");
        if let Some(f) = file.as_mut() {
            let line = serde_json::to_string(&Entry {
                key_hash: key.clone(),
                raw_output: raw_output.clone(),
            })
            .expect("entries always serialize");
            if let Err(e) = writeln!(f, "{line}") {
                tracing::warn!("cache append failed, continuing in memory: {e}");
                *file = None;
            }
        }
        self.state.lock().expect("cache lock poisoned").entries.insert(key, raw_output);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_respect_boundaries() {
        assert_ne!(key_hash(&["ab", "c"]), key_hash(&["a", "bc"]));
        assert_eq!(key_hash(&["x"]).len(), 64);
    }

    #[test]
    fn entries_survive_reopen_and_bad_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/cache.jsonl");
        let c = ResponseCache::open(&path);
        c.insert("k1".into(), "one".into());
        drop(c);
        std::fs::write(&path, format!("{}not json\n", std::fs::read_to_string(&path).unwrap())).unwrap();
        let c = ResponseCache::open(&path);
        assert_eq!(c.get("k1").as_deref(), Some("one"));
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn concurrent_misses_compute_once() {
        let c = ResponseCache::in_memory();
        let calls = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let v = c
                        .get_or_compute::<()>("k", || {
                            calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                            std::thread::sleep(std::time::Duration::from_millis(20));
                            Ok("v".into())
                        })
                        .unwrap();
                    assert_eq!(v, "v");
                });
            }
        });
        assert_eq!(calls.into_inner(), 1);
    }

    #[test]
    fn unwritable_path_degrades_to_memory() {
        let dir = tempfile::tempdir().unwrap();
        let c = ResponseCache::open(dir.path());
        c.insert("k".into(), "v".into());
        assert_eq!(c.get("k").as_deref(), Some("v"));
    }
}
