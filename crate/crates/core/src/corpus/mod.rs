//! Data model, JSONL ingestion and the checkpoint store.

mod checkpoint;
mod document;
mod generator;
mod jsonl;
mod label;

pub use checkpoint::{CheckpointError, CheckpointRecord, CheckpointStore, Durability, StageSnapshot};
pub use document::{Document, Source, Stage, StageTransitionError};
pub use generator::{generate_mini_corpus, MiniCorpus, PlantedDuplicate};
pub use jsonl::{load_jsonl, parse_corpus, read_jsonl, write_jsonl, CorpusError};
pub use label::{
    ConsensusError, ConsensusOutcome, ConsensusResult, LabelVote, SentimentLabel, TaxonomyViolation, UnknownLabel,
    LABELERS_PER_DOCUMENT,
};
