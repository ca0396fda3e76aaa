//! String similarity used for alias matching.
//!
//! `fuzzy_score(a, b) = max(edit, token)` where
//! `edit = 1 - levenshtein(a, b) / max(len a, len b)` over characters and
//! `token = 2 w(LCS) / (w(A) + w(B))` over whitespace token sequences, each
//! token weighted by its character length.

use serde::{Deserialize, Serialize};

/// Which sub-metric produced a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchComponent {
    Exact,
    Edit,
    Token,
}

pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.len() < b.len() {
        return levenshtein(b, a);
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if ca == cb {
                diag
            } else {
                1 + diag.min(above).min(row[j])
            };
            diag = above;
        }
    }
    row[b.len()]
}

/// Levenshtein distance if it is at most `max`, computed in a diagonal band.
pub fn bounded_levenshtein(a: &[char], b: &[char], max: usize) -> Option<usize> {
    if a.len().abs_diff(b.len()) > max {
        return None;
    }
    if a.is_empty() || b.is_empty() {
        return Some(a.len().max(b.len()));
    }
    const FAR: usize = usize::MAX / 2;
    let m = b.len();
    let mut prev = vec![FAR; m + 1];
    let mut cur = vec![FAR; m + 1];
    for (j, slot) in prev.iter_mut().enumerate().take(max.min(m) + 1) {
        *slot = j;
    }
    for i in 1..=a.len() {
        let lo = i.saturating_sub(max).max(1);
        let hi = (i + max).min(m);
        cur.iter_mut().for_each(|c| *c = FAR);
        if i <= max {
            cur[0] = i;
        }
        let mut row_min = cur[0];
        for j in lo..=hi {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let v = (prev[j - 1] + cost).min(prev[j] + 1).min(cur[j - 1] + 1);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > max {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (prev[m] <= max).then_some(prev[m])
}

pub fn edit_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_similarity_chars(&a, &b)
}

fn edit_similarity_chars(a: &[char], b: &[char]) -> f64 {
    let max_len = a.len().max(b.len());
    if max_len == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / max_len as f64
}

fn token_weight(token: &str) -> usize {
    token.chars().count()
}

/// Heaviest common token subsequence, weights = character lengths.
fn weighted_lcs(a: &[&str], b: &[&str]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for ta in a {
        let mut diag = 0;
        for (j, tb) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if ta == tb {
                diag + token_weight(ta)
            } else {
                above.max(row[j])
            };
            diag = above;
        }
    }
    row[b.len()]
}

pub fn token_similarity(a: &str, b: &str) -> f64 {
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    token_similarity_tokens(&ta, &tb)
}

fn token_similarity_tokens(a: &[&str], b: &[&str]) -> f64 {
    let total: usize = a.iter().chain(b).map(|t| token_weight(t)).sum();
    if total == 0 {
        return if a.is_empty() && b.is_empty() { 1.0 } else { 0.0 };
    }
    2.0 * weighted_lcs(a, b) as f64 / total as f64
}

pub fn fuzzy_score(a: &str, b: &str) -> f64 {
    edit_similarity(a, b).max(token_similarity(a, b))
}

/// Score plus the component that reached it; equal strings report `Exact`.
pub fn fuzzy_match(a: &str, b: &str) -> (f64, MatchComponent) {
    if a == b {
        return (1.0, MatchComponent::Exact);
    }
    let edit = edit_similarity(a, b);
    let token = token_similarity(a, b);
    if token > edit {
        (token, MatchComponent::Token)
    } else {
        (edit, MatchComponent::Edit)
    }
}

/// A string pre-split for repeated scoring against many others.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub text: String,
    chars: Vec<char>,
    tokens: Vec<String>,
    weight: usize,
}

impl Prepared {
    pub fn new(text: &str) -> Self {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        Self {
            text: text.to_string(),
            chars: text.chars().collect(),
            weight: tokens.iter().map(|t| token_weight(t)).sum(),
            tokens,
        }
    }

    pub fn char_len(&self) -> usize {
        self.chars.len()
    }

    /// `fuzzy_match(self, other)` when the score reaches `threshold`, else
    /// `None`. Pairs that provably cannot reach it are rejected without
    /// running the full dynamic programs.
    pub fn score_at_least(&self, other: &Prepared, threshold: f64) -> Option<(f64, MatchComponent)> {
        if self.text == other.text {
            return Some((1.0, MatchComponent::Exact));
        }
        let max_len = self.chars.len().max(other.chars.len());
        let budget = ((1.0 - threshold) * max_len as f64 + 1e-9).floor().max(0.0) as usize;
        let edit = bounded_levenshtein(&self.chars, &other.chars, budget)
            .map(|d| 1.0 - d as f64 / max_len as f64)
            .filter(|&s| s >= threshold);

        let lo = self.weight.min(other.weight) as f64;
        let total = (self.weight + other.weight) as f64;
        let token = if total > 0.0 && 2.0 * lo / total >= threshold {
            let a: Vec<&str> = self.tokens.iter().map(String::as_str).collect();
            let b: Vec<&str> = other.tokens.iter().map(String::as_str).collect();
            Some(token_similarity_tokens(&a, &b)).filter(|&s| s >= threshold)
        } else {
            None
        };
        match (edit, token) {
            (Some(e), Some(t)) if t > e => Some((t, MatchComponent::Token)),
            (Some(e), _) => Some((e, MatchComponent::Edit)),
            (None, Some(t)) => Some((t, MatchComponent::Token)),
            (None, None) => None,
        }
    }
}
