//! Text embedding providers for the semantic duplicate pass.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Deserialize;

use crate::normalize::content_tokens;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("embedding provider {provider}: {message}")]
pub struct EmbedError {
    pub provider: String,
    pub message: String,
}

/// Maps texts to unit vectors. Implementations must return one vector per
/// input, in order.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Deterministic feature-hashing embedder over word unigrams and bigrams.
/// Features are sign-hashed and weighted `1 + ln(tf)`.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dims: usize,
}

impl HashingEmbedder {
    pub fn new(dims: usize) -> Self {
        Self { dims: dims.max(1) }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let tokens = content_tokens(text);
        let mut counts: BTreeMap<String, f64> = BTreeMap::new();
        for t in &tokens {
            *counts.entry(format!("u:{t}")).or_default() += 1.0;
        }
        for w in tokens.windows(2) {
            *counts.entry(format!("b:{} {}", w[0], w[1])).or_default() += 1.0;
        }
        let mut v = vec![0.0; self.dims];
        for (feature, tf) in counts {
            let h = fnv1a(feature.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dims as u64) as usize] += sign * (1.0 + tf.ln());
        }
        l2_normalize(&mut v);
        v
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(1024)
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn name(&self) -> &str {
        "hashing"
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Client for an embeddings endpoint: request `{"model", "input": [...]}`,
/// response `{"data": [{"embedding": [...]}]}`.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key_env: Option<String>,
    batch_size: usize,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key_env: Option<String>,
        timeout: Duration,
    ) -> Result<Self, EmbedError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError {
                provider: "http".into(),
                message: e.to_string(),
            })?;
        Ok(Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env,
            batch_size: 64,
            client,
        })
    }

    fn err(&self, message: impl Into<String>) -> EmbedError {
        EmbedError {
            provider: self.model.clone(),
            message: message.into(),
        }
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut request = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "model": self.model, "input": texts }));
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var).map_err(|_| self.err(format!("environment variable {var} is not set")))?;
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| self.err(e.to_string()))?;
        if !response.status().is_success() {
            return Err(self.err(format!("HTTP {}", response.status())));
        }
        let parsed: EmbeddingResponse = response.json().map_err(|e| self.err(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(self.err(format!("expected {} embeddings, got {}", texts.len(), parsed.data.len())));
        }
        Ok(parsed
            .data
            .into_iter()
            .map(|item| {
                let mut v = item.embedding;
                l2_normalize(&mut v);
                v
            })
            .collect())
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn name(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            out.extend(self.embed_batch(batch)?);
        }
        Ok(out)
    }
}
