use serde::{Deserialize, Serialize};

use crate::llm_gateway::{consolidate, summarize, Backend, GatewayError, TokenUsage};
use crate::normalize::{split_sentences, word_count};
use crate::Document;

pub const DEFAULT_CHUNK_WORDS: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub document_id: String,
    /// One partial per chunk; empty when the text fit in a single call.
    pub chunk_summaries: Vec<String>,
    pub final_summary: String,
    pub backend_id: String,
    pub usage_total: TokenUsage,
    #[serde(default)]
    pub truncated: bool,
}

/// Packs whole sentences greedily into chunks of at most `chunk_words`
/// words. A single sentence longer than the limit is cut into word runs.
pub fn chunk_sentences(text: &str, chunk_words: usize) -> Vec<String> {
    let limit = chunk_words.max(1);
    let mut chunks = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut current_words = 0;
    let mut flush = |current: &mut Vec<String>, current_words: &mut usize| {
        if !current.is_empty() {
            chunks.push(current.join(" "));
            current.clear();
            *current_words = 0;
        }
    };
    for sentence in split_sentences(text) {
        let n = word_count(&sentence);
        if n > limit {
            flush(&mut current, &mut current_words);
            let words: Vec<&str> = sentence.split_whitespace().collect();
            for piece in words.chunks(limit) {
                current.push(piece.join(" "));
                flush(&mut current, &mut current_words);
            }
            continue;
        }
        if current_words + n > limit {
            flush(&mut current, &mut current_words);
        }
        current.push(sentence);
        current_words += n;
    }
    flush(&mut current, &mut current_words);
    chunks
}

/// One summarize call for short texts; otherwise one per chunk followed by
/// a consolidation call.
pub fn summarize_document(doc: &Document, backend: &Backend, chunk_words: usize) -> Result<SummaryRecord, GatewayError> {
    let text = &doc.normalized_text;
    let record = |chunk_summaries, final_summary, usage_total, truncated| SummaryRecord {
        document_id: doc.id.clone(),
        chunk_summaries,
        final_summary,
        backend_id: backend.model_id().to_string(),
        usage_total,
        truncated,
    };
    if word_count(text) <= chunk_words {
        let s = summarize(backend, text)?;
        return Ok(record(Vec::new(), s.text, s.usage, s.truncated));
    }
    let mut usage = TokenUsage::default();
    let mut truncated = false;
    let mut partials = Vec::new();
    for chunk in chunk_sentences(text, chunk_words) {
        let s = summarize(backend, &chunk)?;
        usage += s.usage;
        truncated |= s.truncated;
        partials.push(s.text);
    }
    if partials.len() == 1 {
        let only = partials[0].clone();
        return Ok(record(partials, only, usage, truncated));
    }
    let merged = consolidate(backend, &partials)?;
    usage += merged.usage;
    Ok(record(partials, merged.text, usage, truncated || merged.truncated))
}
