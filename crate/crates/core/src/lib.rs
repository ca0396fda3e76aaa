//! Batch engine for five-class Arabic financial sentiment labeling.
//!
//! Raw news and social posts flow through normalization, three-level
//! deduplication, company entity linking, length routing, chunked
//! summarization and three-backend consensus labeling. Every stage is
//! checkpointed so interrupted runs resume where they stopped. The
//! [`metrics`] module holds the agreement, summarization-quality and
//! benchmark statistics used to evaluate the resulting labels.

pub mod corpus;
pub mod dedup;
pub mod entities;
pub mod llm_gateway;
pub mod metrics;
pub mod normalize;
pub mod pipeline;

pub use corpus::{Document, SentimentLabel, Source, Stage};
