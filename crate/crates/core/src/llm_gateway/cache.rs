//! On-disk response cache keyed by (model, decoding, rendered prompt).
//!
//! Entries are appended to `<dir>/responses.jsonl` and loaded into memory on
//! open. Concurrent requests for the same key are coalesced: one caller
//! computes, the others wait for its result.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{BackendConfig, Decoding};
use super::prompt::RenderedPrompt;
use super::TokenUsage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub key: String,
    pub model_id: String,
    pub text: String,
    pub usage: TokenUsage,
    pub latency_ms: f64,
    #[serde(default)]
    pub truncated: bool,
}

pub fn cache_key(backend: &BackendConfig, prompt: &RenderedPrompt) -> String {
    #[derive(Serialize)]
    struct KeyMaterial<'a> {
        model_id: &'a str,
        decoding: &'a Decoding,
        system: &'a str,
        user: &'a str,
    }
    let material = serde_json::to_vec(&KeyMaterial {
        model_id: &backend.model_id,
        decoding: &backend.decoding,
        system: &prompt.system,
        user: &prompt.user,
    })
    .expect("key material serializes");
    hex::encode(Sha256::digest(&material))
}

struct State {
    entries: HashMap<String, CachedResponse>,
    in_flight: HashSet<String>,
}

pub struct ResponseCache {
    path: PathBuf,
    state: Mutex<State>,
    done: Condvar,
    file: Mutex<File>,
}

impl ResponseCache {
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let path = dir.join("responses.jsonl");
        let mut entries = HashMap::new();
        if let Ok(f) = File::open(&path) {
            for line in BufReader::new(f).lines() {
                let line = line?;
                // torn or foreign lines are ignored; they only cost a re-request
                if let Ok(entry) = serde_json::from_str::<CachedResponse>(&line) {
                    entries.insert(entry.key.clone(), entry);
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if fs::metadata(&path)?.len() > 0 && !fs::read(&path)?.ends_with(b"\n") {
            file.write_all(b"\n")?;
        }
        Ok(Self {
            path,
            state: Mutex::new(State {
                entries,
                in_flight: HashSet::new(),
            }),
            done: Condvar::new(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CachedResponse> {
        self.state.lock().expect("cache poisoned").entries.get(key).cloned()
    }

    /// Returns the cached entry for `key` (with `true`), or runs `compute`,
    /// stores a successful result and returns it (with `false`).
    pub fn get_or_compute<E>(
        &self,
        key: &str,
        compute: impl FnOnce() -> Result<CachedResponse, E>,
    ) -> Result<(CachedResponse, bool), E> {
        {
            let mut state = self.state.lock().expect("cache poisoned");
            loop {
                if let Some(hit) = state.entries.get(key) {
                    return Ok((hit.clone(), true));
                }
                if !state.in_flight.contains(key) {
                    state.in_flight.insert(key.to_string());
                    break;
                }
                state = self.done.wait(state).expect("cache poisoned");
            }
        }
        let result = compute();
        let mut state = self.state.lock().expect("cache poisoned");
        state.in_flight.remove(key);
        if let Ok(entry) = &result {
            if let Err(e) = self.append(entry) {
                log::warn!("{}: cache write failed: {e}", self.path.display());
            }
            state.entries.insert(key.to_string(), entry.clone());
        }
        self.done.notify_all();
        result.map(|e| (e, false))
    }

    fn append(&self, entry: &CachedResponse) -> io::Result<()> {
        let mut line = serde_json::to_string(entry).map_err(io::Error::other)?;
        line.push('\n');
        let mut file = self.file.lock().expect("cache file poisoned");
        file.write_all(line.as_bytes())?;
        file.flush()
    }
}
