//! Stage orchestration: routing, chunked summarization, three-way labeling
//! and the checkpointed runner.

mod config;
mod consensus;
mod evaluate;
mod route;
mod run;
mod summarize;

pub use config::{interpolate_env, ConfigError, EmbeddingConfig, EmbeddingProviderKind, EntitiesConfig, RunConfig};
pub use consensus::{collect_votes, decide, label_with_consensus, LabelOutcome, LabelingError, QuarantineRecord, VoteRecord};
pub use evaluate::{load_truth, BenchmarkEntry, RunEvaluation, TruthRecord, CONSENSUS_MODEL};
pub use route::{route, route_with_boundary, Route, RouteDecision, DEFAULT_ROUTE_BOUNDARY};
pub use run::{
    files, run_pipeline, CostSummary, ErrorRecord, LabelInput, LabeledRecord, ModelUsage, Pipeline, PipelineError, RunManifest,
    StageCounts, StageReport, TerminalCounts, STAGES,
};
pub use summarize::{chunk_sentences, summarize_document, SummaryRecord, DEFAULT_CHUNK_WORDS};
