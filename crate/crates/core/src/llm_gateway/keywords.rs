//! Keyword guidance and greeting ignore-list, read from the shipped prompt
//! templates so the mock backend follows exactly what the prompts say.

use std::sync::OnceLock;

use super::prompt::{CLASSIFY_SENTIMENT, SUMMARIZE_CHUNK};
use crate::normalize::{content_tokens, normalize_text, NormalizationConfig};
use crate::SentimentLabel;

/// Order in which the mock checks keyword lists.
pub const PRIORITY: [SentimentLabel; 5] = [
    SentimentLabel::StronglyPositive,
    SentimentLabel::Positive,
    SentimentLabel::Neutral,
    SentimentLabel::Negative,
    SentimentLabel::StronglyNegative,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keyword {
    pub phrase: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Rulebook {
    lists: Vec<(SentimentLabel, Vec<Keyword>)>,
}

/// Normalized content tokens, the unit all phrase matching works on.
pub fn match_tokens(text: &str) -> Vec<String> {
    let normalized = normalize_text(text, &NormalizationConfig::default());
    content_tokens(&normalized)
        .into_iter()
        .map(str::to_string)
        .collect()
}

/// Start positions where `phrase` occurs as a contiguous token run.
pub fn phrase_positions(haystack: &[String], phrase: &[String]) -> Vec<usize> {
    if phrase.is_empty() || phrase.len() > haystack.len() {
        return Vec::new();
    }
    (0..=haystack.len() - phrase.len())
        .filter(|&i| haystack[i..i + phrase.len()] == *phrase)
        .collect()
}

fn label_for_heading(heading: &str) -> Option<SentimentLabel> {
    let heading = match_tokens(heading);
    SentimentLabel::ALL
        .into_iter()
        .find(|l| match_tokens(l.arabic()) == heading)
}

impl Rulebook {
    /// Parses `<category word>: kw، kw، …` lines.
    pub fn from_template(template: &str) -> Self {
        let mut lists: Vec<(SentimentLabel, Vec<Keyword>)> = Vec::new();
        for line in template.lines() {
            let Some((heading, body)) = line.split_once(':') else {
                continue;
            };
            let Some(label) = label_for_heading(heading) else {
                continue;
            };
            let keywords = body
                .split('،')
                .map(str::trim)
                .filter(|k| !k.is_empty())
                .map(|k| Keyword {
                    phrase: k.to_string(),
                    tokens: match_tokens(k),
                })
                .collect();
            lists.push((label, keywords));
        }
        lists.sort_by_key(|(l, _)| PRIORITY.iter().position(|p| p == l));
        Self { lists }
    }

    pub fn keywords(&self, label: SentimentLabel) -> &[Keyword] {
        self.lists
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, k)| k.as_slice())
            .unwrap_or(&[])
    }

    /// First keyword hit in priority order.
    pub fn first_hit(&self, tokens: &[String]) -> Option<(SentimentLabel, &Keyword)> {
        self.lists.iter().find_map(|(label, keywords)| {
            keywords
                .iter()
                .find(|k| !phrase_positions(tokens, &k.tokens).is_empty())
                .map(|k| (*label, k))
        })
    }

    /// Rule-based label; `Neutral` when no keyword appears.
    pub fn classify(&self, text: &str) -> SentimentLabel {
        self.first_hit(&match_tokens(text))
            .map(|(l, _)| l)
            .unwrap_or(SentimentLabel::Neutral)
    }

    /// Keywords of `label` that the rulebook maps back to `label` when they
    /// appear alone. Phrases shadowed by a higher-priority list are excluded.
    pub fn self_consistent_keywords(&self, label: SentimentLabel) -> Vec<&Keyword> {
        self.keywords(label)
            .iter()
            .filter(|k| self.first_hit(&k.tokens).map(|(l, _)| l) == Some(label))
            .collect()
    }
}

pub fn rulebook() -> &'static Rulebook {
    static RULEBOOK: OnceLock<Rulebook> = OnceLock::new();
    RULEBOOK.get_or_init(|| Rulebook::from_template(CLASSIFY_SENTIMENT.user_template))
}

/// Greeting phrases from the summarization prompt's ignore-list, as token
/// sequences, longest first.
pub fn greetings() -> &'static [Vec<String>] {
    static GREETINGS: OnceLock<Vec<Vec<String>>> = OnceLock::new();
    GREETINGS.get_or_init(|| {
        let template = SUMMARIZE_CHUNK.user_template;
        let mut list: Vec<Vec<String>> = template
            .lines()
            .find(|l| l.trim_start().starts_with('('))
            .map(|l| l.trim().trim_start_matches('(').trim_end_matches(')'))
            .unwrap_or_default()
            .split('،')
            .map(match_tokens)
            .filter(|t| !t.is_empty())
            .collect();
        list.sort_by_key(|t| std::cmp::Reverse(t.len()));
        list
    })
}
