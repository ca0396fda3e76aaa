//! Deterministic rule-based backend for offline runs.
//!
//! Classification: first keyword-list hit in priority order, default neutral.
//! Summarization: greeting deletion followed by lead-sentence extraction.
//! Consolidation: concatenation of partial summaries with repeated sentences
//! removed. Token counts are whitespace tokens.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::keywords::{greetings, rulebook};
use super::prompt::{PromptInput, RenderedPrompt, TemplateName};
use super::{Completion, TokenUsage, Transport, TransportError};
use crate::normalize::{normalize_text, split_sentences, strip_punctuation, word_count, NormalizationConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockStyle {
    /// Answers with the rulebook label.
    Keyword,
    /// Rulebook label with the intensity classes folded into their mild
    /// neighbours; a stand-in for a backend that collapses the taxonomy.
    Collapsed,
    /// Always answers with the given string, whatever the request.
    OffTaxonomy(String),
}

impl MockStyle {
    /// Parses the part after `mock://`.
    pub fn from_endpoint(endpoint: &str) -> Option<Self> {
        let rest = endpoint.strip_prefix("mock://")?;
        match rest {
            "" | "keyword" => Some(MockStyle::Keyword),
            "collapsed" => Some(MockStyle::Collapsed),
            other => other
                .strip_prefix("off-taxonomy")
                .map(|s| MockStyle::OffTaxonomy(s.trim_start_matches('/').to_string()))
                .map(|s| match s {
                    MockStyle::OffTaxonomy(t) if t.is_empty() => MockStyle::OffTaxonomy("مختلط".into()),
                    s => s,
                }),
        }
    }
}

pub struct MockTransport {
    style: MockStyle,
    lead_sentences: usize,
    transient_failures: AtomicUsize,
    sends: AtomicUsize,
}

impl MockTransport {
    pub fn new(style: MockStyle) -> Self {
        Self {
            style,
            lead_sentences: 3,
            transient_failures: AtomicUsize::new(0),
            sends: AtomicUsize::new(0),
        }
    }

    pub fn with_lead_sentences(mut self, n: usize) -> Self {
        self.lead_sentences = n.max(1);
        self
    }

    /// The next `n` sends fail with a transient error.
    pub fn with_transient_failures(self, n: usize) -> Self {
        self.transient_failures.store(n, Ordering::SeqCst);
        self
    }

    pub fn sends(&self) -> usize {
        self.sends.load(Ordering::SeqCst)
    }

    fn classify(&self, text: &str) -> String {
        let label = rulebook().classify(text);
        match &self.style {
            MockStyle::Keyword => label.arabic().to_string(),
            MockStyle::Collapsed => label.collapsed().arabic().to_string(),
            MockStyle::OffTaxonomy(s) => s.clone(),
        }
    }
}

fn token_key(token: &str) -> String {
    strip_punctuation(&normalize_text(token, &NormalizationConfig::default())).to_string()
}

/// Removes every greeting phrase from a sentence; `None` when nothing with
/// content remains.
pub fn strip_greetings(sentence: &str) -> Option<String> {
    let tokens: Vec<&str> = sentence.split_whitespace().collect();
    let keys: Vec<String> = tokens.iter().map(|t| token_key(t)).collect();
    let mut keep = vec![true; tokens.len()];
    for greeting in greetings() {
        let n = greeting.len();
        let mut i = 0;
        while i + n <= keys.len() {
            if keep[i..i + n].iter().all(|k| *k) && keys[i..i + n] == greeting[..] {
                keep[i..i + n].iter_mut().for_each(|k| *k = false);
                i += n;
            } else {
                i += 1;
            }
        }
    }
    let kept: Vec<&str> = tokens
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(t, _)| *t)
        .collect();
    let has_content = kept.iter().any(|t| !strip_punctuation(t).is_empty());
    has_content.then(|| kept.join(" "))
}

fn truncate_words(text: &str, max_words: usize) -> (String, bool) {
    if word_count(text) <= max_words {
        return (text.to_string(), false);
    }
    let kept: Vec<&str> = text.split_whitespace().take(max_words).collect();
    (kept.join(" "), true)
}

/// Extractive summary: lead sentences after greeting removal.
pub fn extractive_summary(text: &str, lead_sentences: usize, max_words: usize) -> (String, bool) {
    let lead: Vec<String> = split_sentences(text)
        .iter()
        .filter_map(|s| strip_greetings(s))
        .take(lead_sentences)
        .collect();
    truncate_words(&lead.join(" "), max_words)
}

/// Concatenates partial summaries, dropping sentences already emitted.
pub fn merge_partials(partials: &[String], max_words: usize) -> (String, bool) {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for partial in partials {
        for sentence in split_sentences(partial) {
            if seen.insert(sentence.clone()) {
                out.push(sentence);
            }
        }
    }
    truncate_words(&out.join(" "), max_words)
}

impl Transport for MockTransport {
    fn send(
        &self,
        backend: &super::BackendConfig,
        prompt: &RenderedPrompt,
    ) -> Result<Completion, TransportError> {
        self.sends.fetch_add(1, Ordering::SeqCst);
        let injected = self
            .transient_failures
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if injected {
            return Err(TransportError::Transient("injected mock failure".into()));
        }
        let max_words = backend.decoding.max_tokens as usize;
        let (text, truncated) = match (&self.style, prompt.template, &prompt.input) {
            (MockStyle::OffTaxonomy(s), _, _) => (s.clone(), false),
            (_, TemplateName::ClassifySentiment, input) => (self.classify(&input_string(input)), false),
            (_, TemplateName::SummarizeChunk, input) => {
                extractive_summary(&input_string(input), self.lead_sentences, max_words)
            }
            (_, TemplateName::ConsolidateSummaries, PromptInput::Partials(p)) => merge_partials(p, max_words),
            (_, TemplateName::ConsolidateSummaries, PromptInput::Text(t)) => {
                merge_partials(std::slice::from_ref(t), max_words)
            }
        };
        let usage = TokenUsage {
            input_tokens: (word_count(&prompt.system) + word_count(&prompt.user)) as u64,
            output_tokens: word_count(&text) as u64,
        };
        Ok(Completion {
            text,
            usage,
            latency_ms: 0.0,
            attempts: 1,
            cached: false,
            truncated,
        })
    }
}

fn input_string(input: &PromptInput) -> String {
    match input {
        PromptInput::Text(t) => t.clone(),
        PromptInput::Partials(p) => p.join("\n"),
    }
}
