//! JSON Lines ingestion and stage-file helpers.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::document::{Document, Source};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: invalid UTF-8")]
    InvalidUtf8 { line: usize },
    #[error("line {line}: malformed JSON: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing field {field}")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: field {field} must be {expected}")]
    WrongType {
        line: usize,
        field: &'static str,
        expected: &'static str,
    },
    #[error("line {line}: empty id")]
    EmptyId { line: usize },
    #[error("line {line}: unknown source `{value}` (expected news or social)")]
    UnknownSource { line: usize, value: String },
    #[error("line {line}: invalid published_at `{value}`")]
    InvalidTimestamp { line: usize, value: String },
    #[error("duplicate id `{id}` on lines {first} and {second}")]
    DuplicateId { id: String, first: usize, second: usize },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a raw corpus file. Each non-blank line must carry `id`, `source`,
/// `text` and `published_at`; any other fields are ignored.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    parse_corpus(BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn parse_corpus(mut reader: impl BufRead) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(io_err(Path::new("<input>")))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let line = std::str::from_utf8(&buf).map_err(|_| CorpusError::InvalidUtf8 { line: line_no })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_document_line(line, line_no)?;
        if let Some(&first) = seen.get(&doc.id) {
            return Err(CorpusError::DuplicateId {
                id: doc.id,
                first,
                second: line_no,
            });
        }
        seen.insert(doc.id.clone(), line_no);
        docs.push(doc);
    }
    Ok(docs)
}

fn string_field<'a>(
    obj: &'a serde_json::Map<String, Value>,
    field: &'static str,
    line: usize,
) -> Result<&'a str, CorpusError> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(CorpusError::MissingField { line, field }),
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(CorpusError::WrongType {
            line,
            field,
            expected: "a string",
        }),
    }
}

fn parse_document_line(line: &str, line_no: usize) -> Result<Document, CorpusError> {
    let value: Value = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
        line: line_no,
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(CorpusError::Malformed {
            line: line_no,
            message: "expected a JSON object".into(),
        });
    };
    let id = string_field(&obj, "id", line_no)?;
    if id.trim().is_empty() {
        return Err(CorpusError::EmptyId { line: line_no });
    }
    let source_raw = string_field(&obj, "source", line_no)?;
    let source = Source::parse(source_raw).ok_or_else(|| CorpusError::UnknownSource {
        line: line_no,
        value: source_raw.to_string(),
    })?;
    let text = string_field(&obj, "text", line_no)?;
    let ts_raw = string_field(&obj, "published_at", line_no)?;
    let published_at = DateTime::parse_from_rfc3339(ts_raw)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| CorpusError::InvalidTimestamp {
            line: line_no,
            value: ts_raw.to_string(),
        })?;
    Ok(Document::new(id, source, text, published_at))
}

/// Reads any JSONL stage file into typed records.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, CorpusError> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CorpusError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes records one per line, replacing the file atomically.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let tmp = path.with_extension("jsonl.tmp");
    {
        let file = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut out = BufWriter::new(file);
        for record in records {
            let line = serde_json::to_string(record).map_err(|e| CorpusError::Malformed {
                line: 0,
                message: e.to_string(),
            })?;
            out.write_all(line.as_bytes()).map_err(io_err(&tmp))?;
            out.write_all(b"\n").map_err(io_err(&tmp))?;
        }
        let file = out.into_inner().map_err(|e| CorpusError::Io {
            path: tmp.clone(),
            source: e.into_error(),
        })?;
        file.sync_all().map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))
}
