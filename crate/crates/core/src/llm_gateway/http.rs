//! Generic chat-completion client.
//!
//! Request: `{"model", "messages": [{"role":"system"}, {"role":"user"}],
//! "temperature", "max_tokens", "top_p"?, "top_k"?}`. Response:
//! `{"choices": [{"message": {"content"}, "finish_reason"}], "usage":
//! {"prompt_tokens", "completion_tokens"}}`.

use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::config::BackendConfig;
use super::prompt::RenderedPrompt;
use super::{Completion, TokenUsage, Transport, TransportError};

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Fatal(format!("cannot build HTTP client: {e}")))?;
        Ok(Self { client })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub fn request_body(backend: &BackendConfig, prompt: &RenderedPrompt) -> serde_json::Value {
    let mut body = json!({
        "model": backend.model_id,
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": prompt.user},
        ],
        "temperature": backend.decoding.temperature,
        "max_tokens": backend.decoding.max_tokens,
    });
    if let Some(top_p) = backend.decoding.top_p {
        body["top_p"] = json!(top_p);
    }
    if let Some(top_k) = backend.decoding.top_k {
        body["top_k"] = json!(top_k);
    }
    body
}

pub fn parse_response(body: &str) -> Result<(String, TokenUsage, bool), TransportError> {
    let parsed: ChatResponse = serde_json::from_str(body)
        .map_err(|e| TransportError::Protocol(format!("unexpected response body: {e}")))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| TransportError::Protocol("response has no choices".into()))?;
    let text = choice
        .message
        .content
        .ok_or_else(|| TransportError::Protocol("choice has no message content".into()))?;
    let usage = parsed
        .usage
        .map(|u| TokenUsage {
            input_tokens: u.prompt_tokens,
            output_tokens: u.completion_tokens,
        })
        .unwrap_or_default();
    let truncated = choice.finish_reason.as_deref() == Some("length");
    Ok((text, usage, truncated))
}

impl Transport for HttpTransport {
    fn send(&self, backend: &BackendConfig, prompt: &RenderedPrompt) -> Result<Completion, TransportError> {
        let mut request = self
            .client
            .post(&backend.endpoint)
            .timeout(Duration::from_millis(backend.timeout_ms))
            .json(&request_body(backend, prompt));
        if let Some(var) = &backend.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| TransportError::Fatal(format!("environment variable {var} is not set")))?;
            request = request.bearer_auth(key);
        }
        let started = Instant::now();
        let response = request.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                TransportError::Transient(e.to_string())
            } else {
                TransportError::Fatal(e.to_string())
            }
        })?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| TransportError::Transient(format!("reading body: {e}")))?;
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(TransportError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(TransportError::Fatal(format!("HTTP {status}: {}", truncate(&body, 200))));
        }
        let (text, usage, truncated) = parse_response(&body)?;
        Ok(Completion {
            text,
            usage,
            latency_ms,
            attempts: 1,
            cached: false,
            truncated,
        })
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::prompt::CLASSIFY_SENTIMENT;

    #[test]
    fn request_shape() {
        let mut cfg = BackendConfig::mock("gpt-x");
        cfg.decoding.top_k = Some(1);
        let body = request_body(&cfg, &CLASSIFY_SENTIMENT.render_text("نص"));
        assert_eq!(body["model"], "gpt-x");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 50);
        assert_eq!(body["top_k"], 1);
        assert!(body.get("top_p").is_none());
    }

    #[test]
    fn response_parsing() {
        let ok = r#"{"choices":[{"message":{"content":" إيجابي "},"finish_reason":"stop"}],"usage":{"prompt_tokens":120,"completion_tokens":2}}"#;
        let (text, usage, truncated) = parse_response(ok).unwrap();
        assert_eq!(text, " إيجابي ");
        assert_eq!((usage.input_tokens, usage.output_tokens), (120, 2));
        assert!(!truncated);

        let cut = r#"{"choices":[{"message":{"content":"x"},"finish_reason":"length"}]}"#;
        assert!(parse_response(cut).unwrap().2);

        assert!(matches!(parse_response("{}"), Err(TransportError::Protocol(_))));
        assert!(matches!(parse_response(r#"{"choices":[]}"#), Err(TransportError::Protocol(_))));
        assert!(matches!(parse_response("not json"), Err(TransportError::Protocol(_))));
    }
}
