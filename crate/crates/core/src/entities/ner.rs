//! Named-entity providers that propose organization spans.

use std::time::Duration;

use serde::Deserialize;

use crate::normalize::{normalize_text, NormalizationConfig};

/// Organization span as byte offsets into the tagged text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NerSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("NER provider unavailable: {0}")]
pub struct NerError(pub String);

pub trait NerProvider: Send + Sync {
    fn organizations(&self, text: &str) -> Result<Vec<NerSpan>, NerError>;
}

/// Tags exact occurrences of known organization names. Deterministic; meant
/// for tests and offline runs.
pub struct DictionaryNer {
    names: Vec<Vec<String>>,
}

impl DictionaryNer {
    pub fn new<I, S>(names: I, cfg: &NormalizationConfig) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut names: Vec<Vec<String>> = names
            .into_iter()
            .map(|n| {
                normalize_text(n.as_ref(), cfg)
                    .split_whitespace()
                    .map(str::to_string)
                    .collect::<Vec<_>>()
            })
            .filter(|n| !n.is_empty())
            .collect();
        names.sort();
        names.dedup();
        Self { names }
    }
}

impl NerProvider for DictionaryNer {
    fn organizations(&self, text: &str) -> Result<Vec<NerSpan>, NerError> {
        let tokens: Vec<(usize, &str)> = text
            .split_whitespace()
            .map(|t| (t.as_ptr() as usize - text.as_ptr() as usize, t))
            .collect();
        let mut spans = Vec::new();
        for name in &self.names {
            if name.len() > tokens.len() {
                continue;
            }
            for i in 0..=tokens.len() - name.len() {
                if tokens[i..i + name.len()].iter().zip(name).all(|((_, t), n)| t == n) {
                    let (start, _) = tokens[i];
                    let (last_start, last) = tokens[i + name.len() - 1];
                    spans.push(NerSpan {
                        start,
                        end: last_start + last.len(),
                    });
                }
            }
        }
        spans.sort_by_key(|s| (s.start, s.end));
        Ok(spans)
    }
}

/// Client for an external tagger.
///
/// Request `{"text": ...}`; response `{"entities": [{"start", "end",
/// "label"}]}` with character offsets. Only `ORG`/`ORGANIZATION` labels
/// (optionally BIO-prefixed) are kept.
pub struct HttpNer {
    endpoint: String,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct TaggerResponse {
    entities: Vec<TaggerEntity>,
}

#[derive(Deserialize)]
struct TaggerEntity {
    start: usize,
    end: usize,
    label: String,
}

impl HttpNer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, NerError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| NerError(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            client,
        })
    }
}

fn is_org(label: &str) -> bool {
    let label = label.trim_start_matches("B-").trim_start_matches("I-");
    label.eq_ignore_ascii_case("org") || label.eq_ignore_ascii_case("organization")
}

pub(crate) fn parse_tagger_response(text: &str, body: &str) -> Result<Vec<NerSpan>, NerError> {
    let parsed: TaggerResponse = serde_json::from_str(body).map_err(|e| NerError(format!("bad tagger response: {e}")))?;
    let offsets: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    let mut spans = Vec::new();
    for e in parsed.entities.into_iter().filter(|e| is_org(&e.label)) {
        match (offsets.get(e.start), offsets.get(e.end)) {
            (Some(&start), Some(&end)) if start < end => spans.push(NerSpan { start, end }),
            _ => return Err(NerError(format!("entity offsets {}..{} out of range", e.start, e.end))),
        }
    }
    Ok(spans)
}

impl NerProvider for HttpNer {
    fn organizations(&self, text: &str) -> Result<Vec<NerSpan>, NerError> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "text": text }))
            .send()
            .map_err(|e| NerError(e.to_string()))?;
        if !response.status().is_success() {
            return Err(NerError(format!("HTTP {}", response.status())));
        }
        let body = response.text().map_err(|e| NerError(e.to_string()))?;
        parse_tagger_response(text, &body)
    }
}
