use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    News,
    Social,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::News => "news",
            Source::Social => "social",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "news" => Some(Source::News),
            "social" => Some(Source::Social),
            _ => None,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Processing state of a document.
///
/// Non-terminal states are ordered; a document only ever moves forward. The
/// last four variants are terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingested,
    Normalized,
    Deduped,
    Linked,
    Routed,
    Summarized,
    Labeled,
    Finalized,
    DroppedDuplicate,
    Quarantined,
    Errored,
}

impl Stage {
    fn rank(self) -> Option<u8> {
        match self {
            Stage::Ingested => Some(0),
            Stage::Normalized => Some(1),
            Stage::Deduped => Some(2),
            Stage::Linked => Some(3),
            Stage::Routed => Some(4),
            Stage::Summarized => Some(5),
            Stage::Labeled => Some(6),
            Stage::Finalized => Some(7),
            Stage::DroppedDuplicate | Stage::Quarantined | Stage::Errored => None,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            Stage::Finalized | Stage::DroppedDuplicate | Stage::Quarantined | Stage::Errored
        )
    }

    /// Whether a document at `self` may move to `next`.
    pub fn can_advance_to(self, next: Stage) -> bool {
        if self.is_terminal() {
            return false;
        }
        match (self.rank(), next.rank()) {
            (Some(from), Some(to)) => to > from,
            // a live document may be diverted into any side terminal state
            (Some(_), None) => true,
            _ => false,
        }
    }

    pub fn at_least(self, other: Stage) -> bool {
        match (self.rank(), other.rank()) {
            (Some(a), Some(b)) => a >= b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("document {id}: cannot move from {from:?} to {to:?}")]
pub struct StageTransitionError {
    pub id: String,
    pub from: Stage,
    pub to: Stage,
}

fn default_stage() -> Stage {
    Stage::Ingested
}

/// One ingested text and everything the pipeline has attached to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: Source,
    pub text: String,
    #[serde(default)]
    pub normalized_text: String,
    #[serde(default)]
    pub word_count: usize,
    pub published_at: DateTime<Utc>,
    #[serde(default)]
    pub company_ids: Vec<String>,
    #[serde(default = "default_stage")]
    pub stage: Stage,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        source: Source,
        text: impl Into<String>,
        published_at: DateTime<Utc>,
    ) -> Self {
        Self {
            id: id.into(),
            source,
            text: text.into(),
            normalized_text: String::new(),
            word_count: 0,
            published_at,
            company_ids: Vec::new(),
            stage: Stage::Ingested,
        }
    }

    pub fn advance(&mut self, to: Stage) -> Result<(), StageTransitionError> {
        if !self.stage.can_advance_to(to) {
            return Err(StageTransitionError {
                id: self.id.clone(),
                from: self.stage,
                to,
            });
        }
        self.stage = to;
        Ok(())
    }

    /// Key that orders documents for duplicate-cluster representatives.
    pub fn canonical_key(&self) -> (DateTime<Utc>, &str) {
        (self.published_at, self.id.as_str())
    }
}
