//! Uniform access to text-generation backends.
//!
//! A [`Backend`] wraps a [`Transport`] (HTTP or mock) with retry and
//! exponential backoff, an optional shared [`ResponseCache`], a concurrency
//! cap and call/cost accounting. The three operations the pipeline needs
//! ([`classify_sentiment`], [`summarize`], [`consolidate`]) render the shipped
//! prompt templates and post-process the answers.

mod cache;
mod config;
mod http;
pub mod keywords;
mod mock;
mod prompt;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use cache::{cache_key, CachedResponse, ResponseCache};
pub use config::{presets, BackendConfig, BackendConfigError, Decoding, Pricing};
pub use http::HttpTransport;
pub use mock::{extractive_summary, merge_partials, strip_greetings, MockStyle, MockTransport};
pub use prompt::{
    PromptInput, PromptTemplate, RenderedPrompt, TemplateName, CLASSIFY_REPAIR, CLASSIFY_SENTIMENT,
    CONSOLIDATE_SUMMARIES, SUMMARIZE_CHUNK,
};

use crate::normalize::{normalize_text, strip_punctuation, NormalizationConfig};
use crate::SentimentLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;
    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
        }
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), |a, b| a + b)
    }
}

/// USD cost of `usage` under per-million-token `pricing`.
pub fn estimate_cost(usage: TokenUsage, pricing: &Pricing) -> f64 {
    usage.input_tokens as f64 / 1e6 * pricing.input_usd_per_1m
        + usage.output_tokens as f64 / 1e6 * pricing.output_usd_per_1m
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
    pub latency_ms: f64,
    /// Transport attempts made; 0 when served from cache.
    pub attempts: u32,
    pub cached: bool,
    /// The backend stopped at `max_tokens`.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, backend: &BackendConfig, prompt: &RenderedPrompt) -> Result<Completion, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("backend {model_id}: gave up after {attempts} attempts: {last}")]
    Exhausted {
        model_id: String,
        attempts: u32,
        last: String,
    },
    #[error("backend {model_id}: {message}")]
    Backend { model_id: String, message: String },
    #[error("backend {model_id}: protocol error: {message}")]
    Protocol { model_id: String, message: String },
    #[error("backend {model_id}: empty model output")]
    EmptyOutput { model_id: String },
    #[error("backend {model_id}: answer outside the five-class taxonomy: {raw_output:?}")]
    TaxonomyViolation { model_id: String, raw_output: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl GatewayError {
    pub fn is_taxonomy_violation(&self) -> bool {
        matches!(self, GatewayError::TaxonomyViolation { .. })
    }
}

/// Counting semaphore bounding in-flight requests per backend.
struct Limiter {
    slots: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            slots: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut slots = self.slots.lock().expect("limiter poisoned");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("limiter poisoned");
        }
        *slots -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().expect("limiter poisoned") += 1;
        self.0.freed.notify_one();
    }
}

/// Counters for one backend since construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendStats {
    pub requests: u64,
    pub cache_hits: u64,
    /// Transport sends, including retries.
    pub network_calls: u64,
    pub retries: u64,
    pub failures: u64,
    pub truncated: u64,
    /// Usage billed by calls that reached the backend.
    pub billed_usage: TokenUsage,
    pub billed_cost_usd: f64,
}

pub struct Backend {
    config: BackendConfig,
    transport: Arc<dyn Transport>,
    cache: Option<Arc<ResponseCache>>,
    limiter: Limiter,
    stats: Mutex<BackendStats>,
}

impl Backend {
    pub fn new(config: BackendConfig, transport: Arc<dyn Transport>, cache: Option<Arc<ResponseCache>>) -> Self {
        let limiter = Limiter::new(config.max_in_flight);
        Self {
            config,
            transport,
            cache,
            limiter,
            stats: Mutex::new(BackendStats::default()),
        }
    }

    /// Builds the transport the endpoint asks for.
    pub fn from_config(config: BackendConfig, cache: Option<Arc<ResponseCache>>) -> Result<Self, GatewayError> {
        let transport: Arc<dyn Transport> = if let Some(style) = MockStyle::from_endpoint(&config.endpoint) {
            Arc::new(MockTransport::new(style))
        } else if config.endpoint.starts_with("http://") || config.endpoint.starts_with("https://") {
            Arc::new(
                HttpTransport::new(Duration::from_millis(config.timeout_ms)).map_err(|e| GatewayError::Backend {
                    model_id: config.model_id.clone(),
                    message: e.to_string(),
                })?,
            )
        } else {
            return Err(GatewayError::Backend {
                model_id: config.model_id.clone(),
                message: format!("unsupported endpoint `{}`", config.endpoint),
            });
        };
        Ok(Self::new(config, transport, cache))
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn model_id(&self) -> &str {
        &self.config.model_id
    }

    pub fn stats(&self) -> BackendStats {
        self.stats.lock().expect("stats poisoned").clone()
    }

    fn bump(&self, f: impl FnOnce(&mut BackendStats)) {
        f(&mut self.stats.lock().expect("stats poisoned"));
    }

    /// Sends `prompt`, retrying transient failures with exponential backoff.
    /// Identical requests are served from the cache when one is attached.
    pub fn complete(&self, prompt: &RenderedPrompt) -> Result<Completion, GatewayError> {
        self.bump(|s| s.requests += 1);
        let Some(cache) = &self.cache else {
            return self.send_with_retry(prompt);
        };
        let key = cache_key(&self.config, prompt);
        let mut fresh: Option<Completion> = None;
        let (entry, hit) = cache.get_or_compute(&key, || {
            let completion = self.send_with_retry(prompt)?;
            let entry = CachedResponse {
                key: key.clone(),
                model_id: self.config.model_id.clone(),
                text: completion.text.clone(),
                usage: completion.usage,
                latency_ms: completion.latency_ms,
                truncated: completion.truncated,
            };
            fresh = Some(completion);
            Ok::<_, GatewayError>(entry)
        })?;
        if hit {
            self.bump(|s| s.cache_hits += 1);
            return Ok(Completion {
                text: entry.text,
                usage: entry.usage,
                latency_ms: entry.latency_ms,
                attempts: 0,
                cached: true,
                truncated: entry.truncated,
            });
        }
        Ok(fresh.expect("computed on miss"))
    }

    fn send_with_retry(&self, prompt: &RenderedPrompt) -> Result<Completion, GatewayError> {
        let max_attempts = self.config.max_retries + 1;
        let model_id = &self.config.model_id;
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            if attempt > 1 {
                self.bump(|s| s.retries += 1);
                let delay = self
                    .config
                    .retry_base_ms
                    .saturating_mul(1u64 << (attempt - 2).min(16))
                    .min(30_000);
                if delay > 0 {
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
            let result = {
                let _permit = self.limiter.acquire();
                self.bump(|s| s.network_calls += 1);
                self.transport.send(&self.config, prompt)
            };
            match result {
                Ok(mut completion) => {
                    completion.attempts = attempt;
                    completion.text = completion.text.trim().to_string();
                    let cost = estimate_cost(completion.usage, &self.config.pricing);
                    self.bump(|s| {
                        s.billed_usage += completion.usage;
                        s.billed_cost_usd += cost;
                        if completion.truncated {
                            s.truncated += 1;
                        }
                    });
                    if completion.truncated {
                        log::warn!("backend {model_id}: output truncated at max_tokens");
                    }
                    return Ok(completion);
                }
                Err(TransportError::Transient(msg)) => last = msg,
                Err(TransportError::Fatal(message)) => {
                    self.bump(|s| s.failures += 1);
                    return Err(GatewayError::Backend {
                        model_id: model_id.clone(),
                        message,
                    });
                }
                Err(TransportError::Protocol(message)) => {
                    self.bump(|s| s.failures += 1);
                    return Err(GatewayError::Protocol {
                        model_id: model_id.clone(),
                        message,
                    });
                }
            }
        }
        self.bump(|s| s.failures += 1);
        Err(GatewayError::Exhausted {
            model_id: model_id.clone(),
            attempts: max_attempts,
            last,
        })
    }
}

/// Maps a model answer onto the taxonomy. Accepts the Arabic category words
/// (tolerating diacritics, letter variants, punctuation and spacing), the
/// English class names, `English (Arabic)` pairs that agree, and JSON objects
/// with a `label` or `sentiment` field.
pub fn parse_label(raw: &str) -> Option<SentimentLabel> {
    let raw = raw.trim();
    if raw.starts_with('{') {
        let value: serde_json::Value = serde_json::from_str(raw).ok()?;
        let field = value.get("label").or_else(|| value.get("sentiment"))?;
        return parse_label(field.as_str()?);
    }
    if let Some(label) = parse_single(raw) {
        return Some(label);
    }
    let parts: Vec<&str> = raw
        .split(['(', ')'])
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    if parts.len() < 2 {
        return None;
    }
    let labels: Vec<SentimentLabel> = parts.iter().map(|p| parse_single(p)).collect::<Option<_>>()?;
    labels.windows(2).all(|w| w[0] == w[1]).then(|| labels[0])
}

fn parse_single(raw: &str) -> Option<SentimentLabel> {
    if let Ok(label) = strip_punctuation(raw.trim()).parse::<SentimentLabel>() {
        return Some(label);
    }
    let normalized = normalize_text(raw, &NormalizationConfig::default());
    let key: Vec<&str> = normalized
        .split_whitespace()
        .map(strip_punctuation)
        .filter(|t| !t.is_empty())
        .collect();
    let key = key.join(" ");
    if let Ok(label) = key.parse::<SentimentLabel>() {
        return Some(label);
    }
    SentimentLabel::ALL.into_iter().find(|label| {
        let word = normalize_text(label.arabic(), &NormalizationConfig::default());
        let word: Vec<&str> = word.split_whitespace().map(strip_punctuation).collect();
        word.join(" ") == key
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: SentimentLabel,
    pub usage: TokenUsage,
    pub latency_ms: f64,
    pub repaired: bool,
    pub cached: bool,
}

/// Five-class label for `text`. An unparseable answer is retried once with a
/// repair instruction before failing with [`GatewayError::TaxonomyViolation`].
pub fn classify_sentiment(backend: &Backend, text: &str) -> Result<Classification, GatewayError> {
    if text.trim().is_empty() {
        return Err(GatewayError::InvalidInput("cannot classify empty text".into()));
    }
    let prompt = CLASSIFY_SENTIMENT.render_text(text);
    let first = backend.complete(&prompt)?;
    if let Some(label) = parse_label(&first.text) {
        return Ok(Classification {
            label,
            usage: first.usage,
            latency_ms: first.latency_ms,
            repaired: false,
            cached: first.cached,
        });
    }
    let second = backend.complete(&prompt.with_repair())?;
    match parse_label(&second.text) {
        Some(label) => Ok(Classification {
            label,
            usage: first.usage + second.usage,
            latency_ms: first.latency_ms + second.latency_ms,
            repaired: true,
            cached: first.cached && second.cached,
        }),
        None => Err(GatewayError::TaxonomyViolation {
            model_id: backend.model_id().to_string(),
            raw_output: second.text,
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryText {
    pub text: String,
    pub usage: TokenUsage,
    pub truncated: bool,
}

const SUMMARY_LABELS: [&str; 2] = ["الملخّص النهائي:", "الملخّص:"];

fn finish_summary(backend: &Backend, completion: Completion) -> Result<SummaryText, GatewayError> {
    let mut text = completion.text.trim();
    for label in SUMMARY_LABELS {
        if let Some(rest) = text.strip_prefix(label) {
            text = rest.trim();
        }
    }
    if text.is_empty() {
        return Err(GatewayError::EmptyOutput {
            model_id: backend.model_id().to_string(),
        });
    }
    Ok(SummaryText {
        text: text.to_string(),
        usage: completion.usage,
        truncated: completion.truncated,
    })
}

pub fn summarize(backend: &Backend, text: &str) -> Result<SummaryText, GatewayError> {
    if text.trim().is_empty() {
        return Err(GatewayError::InvalidInput("cannot summarize empty text".into()));
    }
    let completion = backend.complete(&SUMMARIZE_CHUNK.render_text(text))?;
    finish_summary(backend, completion)
}

pub fn consolidate(backend: &Backend, partials: &[String]) -> Result<SummaryText, GatewayError> {
    if partials.is_empty() {
        return Err(GatewayError::InvalidInput("no partial summaries to consolidate".into()));
    }
    let completion = backend.complete(&CONSOLIDATE_SUMMARIES.render_partials(partials))?;
    finish_summary(backend, completion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use SentimentLabel::*;

    fn mock_backend(style: MockStyle) -> (Backend, Arc<MockTransport>) {
        let transport = Arc::new(MockTransport::new(style));
        (
            Backend::new(BackendConfig::mock("mock-a"), transport.clone(), None),
            transport,
        )
    }

    #[test]
    fn cost_arithmetic() {
        let p = Pricing {
            input_usd_per_1m: 1.0,
            output_usd_per_1m: 0.0,
        };
        assert_eq!(estimate_cost(TokenUsage::default(), &p), 0.0);
        let u = TokenUsage {
            input_tokens: 1_000_000,
            output_tokens: 0,
        };
        assert!((estimate_cost(u, &p) - 1.0).abs() < 1e-12);
        let p = Pricing {
            input_usd_per_1m: 2.0,
            output_usd_per_1m: 6.0,
        };
        let u = TokenUsage {
            input_tokens: 250_000,
            output_tokens: 100_000,
        };
        assert!((estimate_cost(u, &p) - 1.10).abs() < 1e-12);
    }

    #[test]
    fn label_parsing_tolerance() {
        assert_eq!(parse_label("إيجابي جداً"), Some(StronglyPositive));
        assert_eq!(parse_label("  ايجابي  جدا. "), Some(StronglyPositive));
        assert_eq!(parse_label("إِيجَابِيّ"), Some(Positive));
        assert_eq!(parse_label("سلبي جدًا"), Some(StronglyNegative));
        assert_eq!(parse_label("حيادي"), Some(Neutral));
        assert_eq!(parse_label("Positive (إيجابي)"), Some(Positive));
        assert_eq!(parse_label("Negative"), Some(Negative));
        assert_eq!(parse_label(r#"{"label": "سلبي", "confidence": 0.9}"#), Some(Negative));
        assert_eq!(parse_label("Positive (سلبي)"), None);
        assert_eq!(parse_label("مختلط"), None);
        assert_eq!(parse_label("التصنيف هو إيجابي لأن الأرباح ارتفعت"), None);
        assert_eq!(parse_label(""), None);
    }

    #[test]
    fn mock_classification_rules() {
        let (b, _) = mock_backend(MockStyle::Keyword);
        assert_eq!(classify_sentiment(&b, "ارتفاع الأرباح للشركة").unwrap().label, StronglyPositive);
        assert_eq!(classify_sentiment(&b, "انهيار السوق").unwrap().label, StronglyNegative);
        assert_eq!(classify_sentiment(&b, "اجتماع الجمعية العمومية").unwrap().label, Neutral);
        assert!(matches!(classify_sentiment(&b, "  "), Err(GatewayError::InvalidInput(_))));
    }

    #[test]
    fn mock_is_deterministic() {
        let (b, _) = mock_backend(MockStyle::Keyword);
        let prompt = SUMMARIZE_CHUNK.render_text("الأولى. الثانية.");
        let a = b.complete(&prompt).unwrap();
        let c = b.complete(&prompt).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn retries_transient_failures() {
        let transport = Arc::new(MockTransport::new(MockStyle::Keyword).with_transient_failures(2));
        let mut cfg = BackendConfig::mock("flaky");
        cfg.max_retries = 3;
        let b = Backend::new(cfg, transport.clone(), None);
        let c = b.complete(&CLASSIFY_SENTIMENT.render_text("نمو")).unwrap();
        assert_eq!(c.attempts, 3);
        assert_eq!(transport.sends(), 3);
        let s = b.stats();
        assert_eq!((s.retries, s.network_calls, s.failures), (2, 3, 0));
    }

    #[test]
    fn exhausted_retries_report_attempts() {
        let transport = Arc::new(MockTransport::new(MockStyle::Keyword).with_transient_failures(10));
        let mut cfg = BackendConfig::mock("down");
        cfg.max_retries = 2;
        let b = Backend::new(cfg, transport, None);
        match b.complete(&CLASSIFY_SENTIMENT.render_text("نمو")).unwrap_err() {
            GatewayError::Exhausted { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn cache_avoids_network() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(ResponseCache::open(dir.path()).unwrap());
        let transport = Arc::new(MockTransport::new(MockStyle::Keyword));
        let b = Backend::new(BackendConfig::mock("m"), transport.clone(), Some(cache));
        let prompt = CLASSIFY_SENTIMENT.render_text("نمو");
        let first = b.complete(&prompt).unwrap();
        let second = b.complete(&prompt).unwrap();
        assert!(!first.cached && second.cached);
        assert_eq!(first.text, second.text);
        assert_eq!(transport.sends(), 1);
        assert_eq!(b.stats().cache_hits, 1);
    }

    #[test]
    fn off_taxonomy_is_a_violation_after_repair() {
        let (b, t) = mock_backend(MockStyle::OffTaxonomy("مختلط".into()));
        match classify_sentiment(&b, "نمو").unwrap_err() {
            GatewayError::TaxonomyViolation { raw_output, .. } => assert_eq!(raw_output, "مختلط"),
            other => panic!("unexpected {other}"),
        }
        assert_eq!(t.sends(), 2);
    }

    #[test]
    fn summaries_drop_greetings() {
        let (b, _) = mock_backend(MockStyle::Keyword);
        let s = summarize(&b, "السلام عليكم. ارتفعت أرباح الشركة. الجملة الثانية.").unwrap();
        assert!(!s.text.contains("السلام"));
        assert_eq!(s.text, "ارتفعت أرباح الشركة. الجملة الثانية.");
        let c = consolidate(&b, &["A.".into(), "B.".into()]).unwrap();
        assert_eq!(c.text, "A. B.");
        assert!(consolidate(&b, &[]).is_err());
    }

    #[test]
    fn summary_label_prefix_stripped_and_empty_rejected() {
        struct Fixed(&'static str);
        impl Transport for Fixed {
            fn send(&self, _: &BackendConfig, _: &RenderedPrompt) -> Result<Completion, TransportError> {
                Ok(Completion {
                    text: self.0.into(),
                    usage: TokenUsage::default(),
                    latency_ms: 0.0,
                    attempts: 1,
                    cached: false,
                    truncated: false,
                })
            }
        }
        let b = Backend::new(BackendConfig::mock("f"), Arc::new(Fixed("الملخّص: نص موجز")), None);
        assert_eq!(summarize(&b, "x").unwrap().text, "نص موجز");
        let b = Backend::new(BackendConfig::mock("f"), Arc::new(Fixed("  ")), None);
        assert!(matches!(summarize(&b, "x"), Err(GatewayError::EmptyOutput { .. })));
    }
}
