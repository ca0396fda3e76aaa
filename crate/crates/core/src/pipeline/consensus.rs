use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConsensusError, ConsensusResult, LabelVote, TaxonomyViolation};
use crate::llm_gateway::{classify_sentiment, Backend, GatewayError};

/// Raw labeler answers for one document, in labeler order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub document_id: String,
    pub votes: Vec<LabelVote>,
    #[serde(default)]
    pub invalid: Vec<TaxonomyViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub document_id: String,
    pub reason: String,
    pub votes: Vec<LabelVote>,
    pub invalid: Vec<TaxonomyViolation>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelOutcome {
    Consensus(ConsensusResult),
    Quarantine(QuarantineRecord),
}

/// Asks every backend for a label. Off-taxonomy answers become invalid
/// votes; any other backend failure fails the document.
pub fn collect_votes(document_id: &str, text: &str, backends: &[Backend]) -> Result<VoteRecord, GatewayError> {
    let answers: Vec<_> = backends
        .par_iter()
        .map(|b| (b.model_id().to_string(), classify_sentiment(b, text)))
        .collect();
    let mut record = VoteRecord {
        document_id: document_id.to_string(),
        votes: Vec::new(),
        invalid: Vec::new(),
    };
    for (model_id, answer) in answers {
        match answer {
            Ok(c) => record.votes.push(LabelVote {
                document_id: document_id.to_string(),
                model_id,
                label: c.label,
                latency_ms: c.latency_ms,
                usage: c.usage,
            }),
            Err(GatewayError::TaxonomyViolation { model_id, raw_output }) => record.invalid.push(TaxonomyViolation {
                document_id: document_id.to_string(),
                model_id,
                raw_output,
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(record)
}

/// Applies the two-of-three rule; too few valid votes quarantines the
/// document.
pub fn decide(record: &VoteRecord) -> Result<LabelOutcome, ConsensusError> {
    match ConsensusResult::from_votes(&record.document_id, record.votes.clone(), record.invalid.clone()) {
        Ok(result) => Ok(LabelOutcome::Consensus(result)),
        Err(e @ ConsensusError::TooFewValidVotes { .. }) => Ok(LabelOutcome::Quarantine(QuarantineRecord {
            document_id: record.document_id.clone(),
            reason: e.to_string(),
            votes: record.votes.clone(),
            invalid: record.invalid.clone(),
        })),
        Err(e) => Err(e),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LabelingError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

pub fn label_with_consensus(document_id: &str, text: &str, backends: &[Backend]) -> Result<LabelOutcome, LabelingError> {
    let record = collect_votes(document_id, text, backends)?;
    Ok(decide(&record)?)
}
