use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::llm_gateway::TokenUsage;

/// Five-class ordinal sentiment taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentimentLabel {
    StronglyNegative,
    Negative,
    Neutral,
    Positive,
    StronglyPositive,
}

impl SentimentLabel {
    /// Taxonomy order; also the row/column order of confusion matrices.
    pub const ALL: [SentimentLabel; 5] = [
        SentimentLabel::StronglyNegative,
        SentimentLabel::Negative,
        SentimentLabel::Neutral,
        SentimentLabel::Positive,
        SentimentLabel::StronglyPositive,
    ];

    pub fn ordinal(self) -> i8 {
        self.index() as i8 - 2
    }

    pub fn from_ordinal(ordinal: i8) -> Option<Self> {
        if (-2..=2).contains(&ordinal) {
            Some(Self::ALL[(ordinal + 2) as usize])
        } else {
            None
        }
    }

    pub fn index(self) -> usize {
        match self {
            SentimentLabel::StronglyNegative => 0,
            SentimentLabel::Negative => 1,
            SentimentLabel::Neutral => 2,
            SentimentLabel::Positive => 3,
            SentimentLabel::StronglyPositive => 4,
        }
    }

    /// Category word used in the classification prompt.
    pub fn arabic(self) -> &'static str {
        match self {
            SentimentLabel::StronglyNegative => "سلبي جداً",
            SentimentLabel::Negative => "سلبي",
            SentimentLabel::Neutral => "حيادي",
            SentimentLabel::Positive => "إيجابي",
            SentimentLabel::StronglyPositive => "إيجابي جداً",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::StronglyNegative => "strongly_negative",
            SentimentLabel::Negative => "negative",
            SentimentLabel::Neutral => "neutral",
            SentimentLabel::Positive => "positive",
            SentimentLabel::StronglyPositive => "strongly_positive",
        }
    }

    /// Display name used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            SentimentLabel::StronglyNegative => "Strongly Neg.",
            SentimentLabel::Negative => "Negative",
            SentimentLabel::Neutral => "Neutral",
            SentimentLabel::Positive => "Positive",
            SentimentLabel::StronglyPositive => "Strongly Pos.",
        }
    }

    /// Maps the two intensity classes onto their mild counterparts.
    pub fn collapsed(self) -> Self {
        match self {
            SentimentLabel::StronglyNegative => SentimentLabel::Negative,
            SentimentLabel::StronglyPositive => SentimentLabel::Positive,
            other => other,
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown sentiment label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for SentimentLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_lowercase() })
            .collect();
        match key.as_str() {
            "strongly_negative" | "very_negative" => Ok(SentimentLabel::StronglyNegative),
            "negative" => Ok(SentimentLabel::Negative),
            "neutral" => Ok(SentimentLabel::Neutral),
            "positive" => Ok(SentimentLabel::Positive),
            "strongly_positive" | "very_positive" => Ok(SentimentLabel::StronglyPositive),
            _ => Err(UnknownLabel(s.to_string())),
        }
    }
}

/// One backend's label for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVote {
    pub document_id: String,
    pub model_id: String,
    pub label: SentimentLabel,
    pub latency_ms: f64,
    pub usage: TokenUsage,
}

/// A backend answer that could not be mapped onto the taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyViolation {
    pub document_id: String,
    pub model_id: String,
    pub raw_output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusOutcome {
    /// All three labelers agree.
    Full,
    /// Exactly two labelers agree.
    Majority,
    /// No two labelers agree.
    Disagreement,
}

/// Outcome of three-way labeling for one document.
///
/// `votes` holds the valid votes and `invalid` the taxonomy violations; the
/// two together always account for exactly three labelers. A document only
/// gets a `ConsensusResult` when at least two votes are valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub document_id: String,
    pub votes: Vec<LabelVote>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub invalid: Vec<TaxonomyViolation>,
    pub outcome: ConsensusOutcome,
    pub final_label: Option<SentimentLabel>,
    pub confidence: Option<f64>,
}

pub const LABELERS_PER_DOCUMENT: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("document {document_id}: expected {expected} labelers, got {got}")]
    WrongLabelerCount {
        document_id: String,
        expected: usize,
        got: usize,
    },
    #[error("document {document_id}: only {valid} valid votes")]
    TooFewValidVotes { document_id: String, valid: usize },
}

impl ConsensusResult {
    pub fn from_votes(
        document_id: impl Into<String>,
        votes: Vec<LabelVote>,
        invalid: Vec<TaxonomyViolation>,
    ) -> Result<Self, ConsensusError> {
        let document_id = document_id.into();
        let total = votes.len() + invalid.len();
        if total != LABELERS_PER_DOCUMENT {
            return Err(ConsensusError::WrongLabelerCount {
                document_id,
                expected: LABELERS_PER_DOCUMENT,
                got: total,
            });
        }
        if votes.len() < 2 {
            return Err(ConsensusError::TooFewValidVotes {
                document_id,
                valid: votes.len(),
            });
        }
        let mut counts = [0usize; 5];
        for vote in &votes {
            counts[vote.label.index()] += 1;
        }
        // at most one class can reach two of three votes
        let (top_index, top_count) = counts
            .iter()
            .enumerate()
            .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))
            .map(|(i, &c)| (i, c))
            .unwrap_or((0, 0));
        let (outcome, final_label, confidence) = match top_count {
            3 => (ConsensusOutcome::Full, Some(SentimentLabel::ALL[top_index]), Some(1.0)),
            2 => (
                ConsensusOutcome::Majority,
                Some(SentimentLabel::ALL[top_index]),
                Some(2.0 / 3.0),
            ),
            _ => (ConsensusOutcome::Disagreement, None, None),
        };
        Ok(Self {
            document_id,
            votes,
            invalid,
            outcome,
            final_label,
            confidence,
        })
    }
}
