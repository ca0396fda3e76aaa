//! Append-only per-stage checkpoint store.
//!
//! Layout: `<dir>/<stage>.ckpt.jsonl`, one [`CheckpointRecord`] per line. The
//! latest record per document wins on load. A torn trailing line (process
//! killed mid-append) is skipped and counted as corrupt.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub document_id: String,
    pub stage: String,
    pub payload: Value,
    pub written_at: DateTime<Utc>,
    pub attempt: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid stage name `{0}` (expected [a-z0-9_]+)")]
    InvalidStage(String),
    #[error("cannot serialize payload: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl CheckpointError {
    /// Storage failures can be retried; malformed requests cannot.
    pub fn is_retryable(&self) -> bool {
        matches!(self, CheckpointError::Io { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Durability {
    /// fsync after every put.
    #[default]
    Fsync,
    /// Flush to the OS only; survives process crashes but not power loss.
    Flush,
}

/// Result of replaying one stage file.
#[derive(Debug, Clone, Default)]
pub struct StageSnapshot {
    pub records: BTreeMap<String, CheckpointRecord>,
    pub corrupt_records: usize,
}

impl StageSnapshot {
    pub fn payload(&self, document_id: &str) -> Option<&Value> {
        self.records.get(document_id).map(|r| &r.payload)
    }

    pub fn payloads(&self) -> BTreeMap<String, Value> {
        self.records
            .iter()
            .map(|(k, r)| (k.clone(), r.payload.clone()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

struct StageWriter {
    file: File,
    attempts: HashMap<String, u32>,
}

pub struct CheckpointStore {
    dir: PathBuf,
    durability: Durability,
    writers: Mutex<HashMap<String, Arc<Mutex<StageWriter>>>>,
}

fn valid_stage(stage: &str) -> bool {
    !stage.is_empty()
        && stage
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

impl CheckpointStore {
    pub fn open(dir: impl Into<PathBuf>, durability: Durability) -> Result<Self, CheckpointError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| CheckpointError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self {
            dir,
            durability,
            writers: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn stage_path(&self, stage: &str) -> PathBuf {
        self.dir.join(format!("{stage}.ckpt.jsonl"))
    }

    fn writer(&self, stage: &str) -> Result<Arc<Mutex<StageWriter>>, CheckpointError> {
        if !valid_stage(stage) {
            return Err(CheckpointError::InvalidStage(stage.to_string()));
        }
        let mut writers = self.writers.lock().expect("checkpoint writer table poisoned");
        if let Some(w) = writers.get(stage) {
            return Ok(Arc::clone(w));
        }
        let snapshot = self.load(stage)?;
        let attempts = snapshot
            .records
            .into_iter()
            .map(|(k, r)| (k, r.attempt))
            .collect();
        let path = self.stage_path(stage);
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(|source| CheckpointError::Io {
                path: path.clone(),
                source,
            })?;
        // terminate a torn tail so the next record starts on its own line
        if ends_without_newline(&mut file).map_err(|source| CheckpointError::Io {
            path: path.clone(),
            source,
        })? {
            file.write_all(b"\n")
                .map_err(|source| CheckpointError::Io { path, source })?;
        }
        let writer = Arc::new(Mutex::new(StageWriter { file, attempts }));
        writers.insert(stage.to_string(), Arc::clone(&writer));
        Ok(writer)
    }

    /// Appends a record. Durable (per the store's [`Durability`]) on return.
    pub fn put(&self, record: &CheckpointRecord) -> Result<(), CheckpointError> {
        let writer = self.writer(&record.stage)?;
        let mut w = writer.lock().expect("checkpoint writer poisoned");
        self.append(&mut w, &record.stage, record)?;
        let slot = w.attempts.entry(record.document_id.clone()).or_insert(0);
        *slot = (*slot).max(record.attempt);
        Ok(())
    }

    /// Serializes `payload` and appends it with the next attempt number for
    /// this document. Returns the attempt number written.
    pub fn record<T: Serialize>(
        &self,
        stage: &str,
        document_id: &str,
        payload: &T,
    ) -> Result<u32, CheckpointError> {
        let payload = serde_json::to_value(payload)?;
        let writer = self.writer(stage)?;
        let mut w = writer.lock().expect("checkpoint writer poisoned");
        let attempt = w.attempts.get(document_id).copied().unwrap_or(0) + 1;
        let record = CheckpointRecord {
            document_id: document_id.to_string(),
            stage: stage.to_string(),
            payload,
            written_at: Utc::now(),
            attempt,
        };
        self.append(&mut w, stage, &record)?;
        w.attempts.insert(document_id.to_string(), attempt);
        Ok(attempt)
    }

    fn append(
        &self,
        w: &mut StageWriter,
        stage: &str,
        record: &CheckpointRecord,
    ) -> Result<(), CheckpointError> {
        let mut line = serde_json::to_string(&RecordOnWire::from(record))?;
        line.push('\n');
        let path = self.stage_path(stage);
        let io = |source| CheckpointError::Io {
            path: path.clone(),
            source,
        };
        w.file.write_all(line.as_bytes()).map_err(io)?;
        w.file.flush().map_err(io)?;
        if self.durability == Durability::Fsync {
            w.file.sync_data().map_err(io)?;
        }
        Ok(())
    }

    /// Replays a stage file. Missing file means an empty stage.
    pub fn load(&self, stage: &str) -> Result<StageSnapshot, CheckpointError> {
        if !valid_stage(stage) {
            return Err(CheckpointError::InvalidStage(stage.to_string()));
        }
        let path = self.stage_path(stage);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(StageSnapshot::default()),
            Err(source) => return Err(CheckpointError::Io { path, source }),
        };
        let mut snapshot = StageSnapshot::default();
        let mut reader = BufReader::new(file);
        let mut buf = Vec::new();
        loop {
            buf.clear();
            let n = reader
                .read_until(b'\n', &mut buf)
                .map_err(|source| CheckpointError::Io {
                    path: path.clone(),
                    source,
                })?;
            if n == 0 {
                break;
            }
            let parsed = std::str::from_utf8(&buf)
                .ok()
                .filter(|l| l.ends_with('\n'))
                .and_then(|l| serde_json::from_str::<CheckpointRecord>(l.trim_end()).ok())
                .filter(|r| r.stage == stage);
            match parsed {
                Some(record) => {
                    snapshot.records.insert(record.document_id.clone(), record);
                }
                None => {
                    if !buf.iter().all(u8::is_ascii_whitespace) {
                        snapshot.corrupt_records += 1;
                    }
                }
            }
        }
        if snapshot.corrupt_records > 0 {
            log::warn!(
                "{}: skipped {} corrupt checkpoint record(s)",
                path.display(),
                snapshot.corrupt_records
            );
        }
        Ok(snapshot)
    }

    /// Rewrites a stage file with only the latest record per document, via
    /// write-to-temp, fsync and rename.
    pub fn compact(&self, stage: &str) -> Result<usize, CheckpointError> {
        let writer = self.writer(stage)?;
        let mut w = writer.lock().expect("checkpoint writer poisoned");
        let snapshot = self.load(stage)?;
        let path = self.stage_path(stage);
        let tmp = path.with_extension("jsonl.compact");
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |source| CheckpointError::Io { path: p, source }
        };
        {
            let mut out = File::create(&tmp).map_err(io(&tmp))?;
            for record in snapshot.records.values() {
                let mut line = serde_json::to_string(&RecordOnWire::from(record))?;
                line.push('\n');
                out.write_all(line.as_bytes()).map_err(io(&tmp))?;
            }
            out.sync_all().map_err(io(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(io(&path))?;
        w.file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(io(&path))?;
        Ok(snapshot.records.len())
    }
}

fn ends_without_newline(file: &mut File) -> io::Result<bool> {
    use std::io::{Read, Seek, SeekFrom};
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(false);
    }
    file.seek(SeekFrom::Start(len - 1))?;
    let mut last = [0u8; 1];
    file.read_exact(&mut last)?;
    Ok(last[0] != b'\n')
}

/// Wire form with fixed timestamp precision.
#[derive(Serialize)]
struct RecordOnWire<'a> {
    document_id: &'a str,
    stage: &'a str,
    payload: &'a Value,
    written_at: String,
    attempt: u32,
}

impl<'a> From<&'a CheckpointRecord> for RecordOnWire<'a> {
    fn from(r: &'a CheckpointRecord) -> Self {
        Self {
            document_id: &r.document_id,
            stage: &r.stage,
            payload: &r.payload,
            written_at: r.written_at.to_rfc3339_opts(SecondsFormat::Millis, true),
            attempt: r.attempt,
        }
    }
}
