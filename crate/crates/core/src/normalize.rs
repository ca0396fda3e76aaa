//! Arabic text cleaning: noise removal, letter-variant unification and
//! punctuation standardization, plus the tokenization helpers shared by the
//! rest of the pipeline.
//!
//! The output alphabet is Arabic letters, digits, Latin letters, the
//! canonical punctuation set and single spaces. Emoji, symbols, control and
//! bidi-format characters are dropped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::decompose_compatible;
use unicode_normalization::UnicodeNormalization;

/// Punctuation that survives normalization unchanged.
pub const CANONICAL_PUNCTUATION: &str = ".,;:!?\"'()-%/$";

const SENTENCE_TERMINATORS: [char; 4] = ['.', '!', '?', '؟'];

const TATWEEL: char = '\u{0640}';
const ALEF: char = '\u{0627}';
const YA: char = '\u{064A}';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationConfig {
    /// أ إ آ ٱ → ا
    pub unify_alef: bool,
    /// ى (and Persian ی) → ي
    pub unify_ya_maqsura: bool,
    pub remove_tatweel: bool,
    pub remove_diacritics: bool,
    pub strip_urls: bool,
    /// Drops `@mention` tokens and unwraps `#hash_tags` into words.
    pub strip_mentions_hashmarks: bool,
    pub collapse_whitespace: bool,
    /// Arabic-Indic and Persian digits → ASCII.
    pub ascii_digits: bool,
    pub lowercase_latin: bool,
    /// `!!!` → `!`
    pub collapse_punctuation_runs: bool,
    /// Single-character source → replacement (empty string deletes).
    pub punctuation_map: BTreeMap<String, String>,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            unify_alef: true,
            unify_ya_maqsura: true,
            remove_tatweel: true,
            remove_diacritics: true,
            strip_urls: true,
            strip_mentions_hashmarks: true,
            collapse_whitespace: true,
            ascii_digits: true,
            lowercase_latin: true,
            collapse_punctuation_runs: true,
            punctuation_map: default_punctuation_map(),
        }
    }
}

pub fn default_punctuation_map() -> BTreeMap<String, String> {
    [
        ("،", ","),
        ("؛", ";"),
        ("؟", "?"),
        ("٪", "%"),
        ("٫", "."),
        ("٬", ","),
        ("۔", "."),
        ("«", "\""),
        ("»", "\""),
        ("“", "\""),
        ("”", "\""),
        ("„", "\""),
        ("‘", "'"),
        ("’", "'"),
        ("…", "."),
        ("–", "-"),
        ("—", "-"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn is_diacritic(c: char) -> bool {
    matches!(c, '\u{064B}'..='\u{065F}' | '\u{0670}' | '\u{06D6}'..='\u{06ED}')
}

pub fn is_arabic_letter(c: char) -> bool {
    matches!(c,
        '\u{0621}'..='\u{063A}'
        | '\u{0641}'..='\u{064A}'
        | '\u{066E}' | '\u{066F}'
        | '\u{0671}'..='\u{06D3}'
        | '\u{06D5}'
        | '\u{06FA}'..='\u{06FC}')
}

fn is_invisible(c: char) -> bool {
    matches!(c,
        '\u{200B}'..='\u{200F}'
        | '\u{202A}'..='\u{202E}'
        | '\u{2060}'..='\u{2069}'
        | '\u{061C}'
        | '\u{FEFF}'
        | '\u{00AD}')
        || (c.is_control() && !c.is_whitespace())
}

fn is_compat_block(c: char) -> bool {
    matches!(c, '\u{FB50}'..='\u{FDFF}' | '\u{FE70}'..='\u{FEFF}' | '\u{FF00}'..='\u{FFEF}')
}

enum Segment {
    Word(String),
    Space(String),
}

struct Normalizer<'a> {
    cfg: &'a NormalizationConfig,
    punct: BTreeMap<char, String>,
}

impl<'a> Normalizer<'a> {
    fn new(cfg: &'a NormalizationConfig) -> Self {
        let punct = cfg
            .punctuation_map
            .iter()
            .filter_map(|(k, v)| {
                let mut chars = k.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Some((c, v.clone())),
                    _ => None,
                }
            })
            .collect();
        Self { cfg, punct }
    }

    fn map_char(&self, c: char, out: &mut String) {
        let cfg = self.cfg;
        if c.is_whitespace() {
            out.push(if cfg.collapse_whitespace { ' ' } else { c });
            return;
        }
        if is_invisible(c) {
            return;
        }
        if let Some(rep) = self.punct.get(&c) {
            out.push_str(rep);
            return;
        }
        let mapped = match c {
            TATWEEL if cfg.remove_tatweel => return,
            c if cfg.remove_diacritics && is_diacritic(c) => return,
            '\u{0622}' | '\u{0623}' | '\u{0625}' | '\u{0671}' if cfg.unify_alef => ALEF,
            '\u{0649}' | '\u{06CC}' if cfg.unify_ya_maqsura => YA,
            '\u{06A9}' => '\u{0643}',
            '\u{0660}'..='\u{0669}' if cfg.ascii_digits => {
                char::from(b'0' + (c as u32 - 0x0660) as u8)
            }
            '\u{06F0}'..='\u{06F9}' if cfg.ascii_digits => {
                char::from(b'0' + (c as u32 - 0x06F0) as u8)
            }
            'A'..='Z' if cfg.lowercase_latin => c.to_ascii_lowercase(),
            c => c,
        };
        out.push(mapped);
    }

    fn allowed(&self, c: char) -> bool {
        let cfg = self.cfg;
        c == ' '
            || is_arabic_letter(c)
            || c.is_ascii_alphanumeric()
            || CANONICAL_PUNCTUATION.contains(c)
            || self.punct.values().any(|v| v.contains(c))
            || (!cfg.ascii_digits && matches!(c, '\u{0660}'..='\u{0669}' | '\u{06F0}'..='\u{06F9}'))
            || (!cfg.remove_tatweel && c == TATWEEL)
            || (!cfg.remove_diacritics && is_diacritic(c))
            || (!cfg.strip_mentions_hashmarks && matches!(c, '@' | '#' | '_'))
            || (!cfg.collapse_whitespace && c.is_whitespace())
    }

    fn is_url(token: &str) -> bool {
        let lower = token.to_ascii_lowercase();
        lower.starts_with("http:") || lower.starts_with("https:") || lower.starts_with("www.")
    }

    fn segment(text: &str) -> Vec<Segment> {
        let mut segments = Vec::new();
        let mut cur = String::new();
        let mut in_space = false;
        for c in text.chars() {
            let space = c.is_whitespace();
            if space != in_space && !cur.is_empty() {
                let s = std::mem::take(&mut cur);
                segments.push(if in_space { Segment::Space(s) } else { Segment::Word(s) });
            }
            in_space = space;
            cur.push(c);
        }
        if !cur.is_empty() {
            segments.push(if in_space { Segment::Space(cur) } else { Segment::Word(cur) });
        }
        segments
    }

    /// Token-level stripping of URLs, mentions and hash marks.
    fn strip_tokens(&self, word: String, out: &mut Vec<Segment>) {
        let mut work = vec![word];
        while let Some(token) = work.pop() {
            if self.cfg.strip_urls && Self::is_url(&token) {
                continue;
            }
            if self.cfg.strip_mentions_hashmarks {
                if token.starts_with('@') {
                    continue;
                }
                if let Some(tag) = token.strip_prefix('#') {
                    let tag = tag.trim_start_matches('#');
                    // words inside a hashtag are re-examined on their own
                    let mut parts: Vec<String> = tag
                        .split('_')
                        .filter(|p| !p.is_empty())
                        .map(str::to_string)
                        .collect();
                    parts.reverse();
                    for (i, p) in parts.into_iter().enumerate() {
                        if i > 0 {
                            work.push("\u{0}".into());
                        }
                        work.push(p);
                    }
                    continue;
                }
            }
            if token == "\u{0}" {
                out.push(Segment::Space(" ".into()));
            } else {
                out.push(Segment::Word(token));
            }
        }
    }

    fn pass(&self, text: &str) -> String {
        let mut mapped = String::with_capacity(text.len());
        let composed: String = text
            .chars()
            .flat_map(|c| {
                let mut v = Vec::new();
                if is_compat_block(c) {
                    decompose_compatible(c, |d| v.push(d));
                } else {
                    v.push(c);
                }
                v
            })
            .nfc()
            .collect();
        for c in composed.chars() {
            self.map_char(c, &mut mapped);
        }

        let mut segments = Vec::new();
        for seg in Self::segment(&mapped) {
            match seg {
                Segment::Word(w) => self.strip_tokens(w, &mut segments),
                space => segments.push(space),
            }
        }

        let mut words = Vec::new();
        let mut out = String::with_capacity(mapped.len());
        for seg in segments {
            match seg {
                Segment::Word(w) => {
                    let filtered = self.filter_chars(&w);
                    if self.cfg.collapse_whitespace {
                        if !filtered.is_empty() {
                            words.push(filtered);
                        }
                    } else {
                        out.push_str(&filtered);
                    }
                }
                Segment::Space(s) => {
                    if !self.cfg.collapse_whitespace {
                        out.push_str(&s);
                    }
                }
            }
        }
        if self.cfg.collapse_whitespace {
            words.join(" ")
        } else {
            out
        }
    }

    fn filter_chars(&self, word: &str) -> String {
        let mut out = String::with_capacity(word.len());
        let mut last: Option<char> = None;
        for c in word.chars().filter(|&c| self.allowed(c)) {
            if self.cfg.collapse_punctuation_runs
                && last == Some(c)
                && CANONICAL_PUNCTUATION.contains(c)
            {
                continue;
            }
            out.push(c);
            last = Some(c);
        }
        out
    }
}

/// Normalizes `text` under `cfg`. Total and idempotent.
pub fn normalize_text(text: &str, cfg: &NormalizationConfig) -> String {
    let normalizer = Normalizer::new(cfg);
    let mut current = normalizer.pass(text);
    // Deleting characters can expose a new URL or mention token (`h@ttp://`),
    // so passes repeat until nothing changes.
    for _ in 0..8 {
        let next = normalizer.pass(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

/// Number of maximal non-whitespace runs.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Strips canonical punctuation from both ends of a token.
pub fn strip_punctuation(token: &str) -> &str {
    token.trim_matches(|c: char| CANONICAL_PUNCTUATION.contains(c) || "؟،؛".contains(c))
}

/// Whitespace tokens with edge punctuation removed; empty results dropped.
pub fn content_tokens(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .map(strip_punctuation)
        .filter(|t| !t.is_empty())
        .collect()
}

/// Splits on tokens ending in `. ! ? ؟`. Decimal points inside a token
/// (`1.65`) do not end a sentence. Sentences keep their terminators and are
/// joined internally by single spaces.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for token in text.split_whitespace() {
        current.push(token);
        if token.ends_with(SENTENCE_TERMINATORS) {
            sentences.push(current.join(" "));
            current.clear();
        }
    }
    if !current.is_empty() {
        sentences.push(current.join(" "));
    }
    sentences
}
