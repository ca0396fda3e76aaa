//! Checkpointed stage runner.
//!
//! Every stage reads the previous stage's JSONL file from the run directory
//! and writes its own, so a full run and the stage commands executed in
//! sequence produce the same files. Per-document results are checkpointed
//! with a fingerprint of their inputs; a re-run reuses every matching
//! checkpoint and only computes what is missing.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{EmbeddingProviderKind, RunConfig};
use super::consensus::{collect_votes, decide, LabelOutcome, QuarantineRecord, VoteRecord};
use super::route::{route_with_boundary, Route, RouteDecision};
use super::summarize::{summarize_document, SummaryRecord};
use crate::corpus::{
    read_jsonl, write_jsonl, CheckpointError, CheckpointStore, ConsensusOutcome, ConsensusResult, CorpusError,
};
use crate::dedup::{dedup_pass, DedupDecision, EmbeddingProvider, HashingEmbedder, HttpEmbedder, Verdict};
use crate::entities::{load_companies, reference_companies, EntityLink, FinancialLexicon, HttpNer, Linker, LinkerConfig, NerProvider};
use crate::llm_gateway::{estimate_cost, Backend, BackendStats, ResponseCache, TokenUsage};
use crate::normalize::{normalize_text, word_count};
use crate::{Document, Stage};

pub const STAGES: [&str; 8] = ["ingest", "normalize", "dedup", "link", "route", "summarize", "label", "consensus"];

pub mod files {
    pub const INGESTED: &str = "ingested.jsonl";
    pub const NORMALIZED: &str = "normalized.jsonl";
    pub const DEDUPED: &str = "deduped.jsonl";
    pub const DEDUP_AUDIT: &str = "dedup_audit.jsonl";
    pub const LINKED: &str = "linked.jsonl";
    pub const LINKS: &str = "links.jsonl";
    pub const ROUTED: &str = "routed.jsonl";
    pub const ROUTES: &str = "routes.jsonl";
    pub const SUMMARIES: &str = "summaries.jsonl";
    pub const VOTES: &str = "votes.jsonl";
    pub const LABELED: &str = "labeled.jsonl";
    pub const QUARANTINE: &str = "quarantine.jsonl";
    pub const ERRORS: &str = "errors.jsonl";
    pub const MANIFEST: &str = "manifest.json";
    pub const EVALUATION: &str = "evaluation.json";
    pub const SUMMARY_SERIES: &str = "summary_series.csv";
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("missing input {}: run the `{stage}` stage first", path.display())]
    MissingInput { stage: &'static str, path: PathBuf },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{context}: {message}")]
    Setup { context: &'static str, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run cancelled during {stage}; finished documents are checkpointed")]
    Cancelled { stage: &'static str },
    #[error("evaluation: {0}")]
    Metrics(#[from] crate::metrics::MetricsError),
}

impl PipelineError {
    fn setup(context: &'static str, e: impl ToString) -> Self {
        PipelineError::Setup {
            context,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub document_id: String,
    pub stage: String,
    pub message: String,
}

/// Which text the labelers saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelInput {
    NormalizedText,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub document: Document,
    pub label_input: LabelInput,
    pub consensus: ConsensusResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    #[serde(rename = "in")]
    pub input: usize,
    #[serde(rename = "out")]
    pub output: usize,
    pub dropped: usize,
    pub quarantined: usize,
    pub errored: usize,
}

impl StageCounts {
    pub fn is_conserved(&self) -> bool {
        self.input == self.output + self.dropped + self.quarantined + self.errored
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub counts: StageCounts,
    /// Documents whose checkpoint was reused.
    pub resumed: usize,
    pub wall_clock_ms: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub backend_calls: BTreeMap<String, BackendStats>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TerminalCounts {
    pub ingested: usize,
    pub finalized: usize,
    pub dropped_duplicate: usize,
    pub quarantined: usize,
    pub errored: usize,
    /// Documents not yet in a terminal state.
    pub in_progress: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelUsage {
    pub usage: TokenUsage,
    pub cost_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    /// Cost of every call recorded in the run's summaries and votes,
    /// whether it was sent now or served from cache.
    pub attributed_cost_usd: f64,
    /// Cost of calls that actually reached a backend in the latest
    /// invocation of each stage.
    pub billed_cost_usd: f64,
    pub labeled_documents: usize,
    pub cost_per_sample_usd: f64,
    pub max_cost_per_sample_usd: f64,
    pub ceiling_exceeded: bool,
    pub per_model: BTreeMap<String, ModelUsage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: RunConfig,
    pub stages: Vec<StageReport>,
    pub terminal: TerminalCounts,
    pub conserved: bool,
    pub cost: CostSummary,
    pub error_rate: f64,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Network calls per backend summed over stages.
    pub fn network_calls(&self) -> u64 {
        self.stages
            .iter()
            .flat_map(|s| s.backend_calls.values())
            .map(|b| b.network_calls)
            .sum()
    }

    pub fn cache_hits(&self) -> u64 {
        self.stages
            .iter()
            .flat_map(|s| s.backend_calls.values())
            .map(|b| b.cache_hits)
            .sum()
    }

    pub fn exceeds_error_threshold(&self) -> bool {
        self.error_rate > self.config.max_error_rate
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpointed<T> {
    input: String,
    output: T,
}

fn fingerprint<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("fingerprint input serializes");
    hex::encode(&Sha256::digest(&bytes)[..16])
}

enum Outcome<T> {
    Done(T),
    Failed(String),
    Cancelled,
}

type ProgressHook = Arc<dyn Fn(&str, usize) + Send + Sync>;

fn stats_delta(before: &BackendStats, after: &BackendStats) -> BackendStats {
    BackendStats {
        requests: after.requests - before.requests,
        cache_hits: after.cache_hits - before.cache_hits,
        network_calls: after.network_calls - before.network_calls,
        retries: after.retries - before.retries,
        failures: after.failures - before.failures,
        truncated: after.truncated - before.truncated,
        billed_usage: TokenUsage {
            input_tokens: after.billed_usage.input_tokens - before.billed_usage.input_tokens,
            output_tokens: after.billed_usage.output_tokens - before.billed_usage.output_tokens,
        },
        billed_cost_usd: after.billed_cost_usd - before.billed_cost_usd,
    }
}

/// A run directory plus everything needed to execute stages in it.
pub struct Pipeline {
    config: RunConfig,
    out: PathBuf,
    store: CheckpointStore,
    summarizer: Backend,
    labelers: Vec<Backend>,
    linker: Linker,
    ner: Option<HttpNer>,
    embedder: Option<Box<dyn EmbeddingProvider>>,
    pool: rayon::ThreadPool,
    cancel: Arc<AtomicBool>,
    progress: Option<ProgressHook>,
}

impl Pipeline {
    /// Validates the config and prepares `out`. Nothing is processed yet.
    pub fn open(config: RunConfig, out: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        config.validate().map_err(|e| PipelineError::setup("config", e))?;
        let out = out.into();
        std::fs::create_dir_all(&out).map_err(|source| PipelineError::Io {
            path: out.clone(),
            source,
        })?;
        let store = CheckpointStore::open(out.join("checkpoints"), config.durability)?;
        let cache_dir = config.cache_dir.clone().unwrap_or_else(|| out.join("cache"));
        let cache = Arc::new(ResponseCache::open(&cache_dir).map_err(|e| PipelineError::Io {
            path: cache_dir.clone(),
            source: e,
        })?);
        let summarizer =
            Backend::from_config(config.summarizer.clone(), Some(Arc::clone(&cache))).map_err(|e| PipelineError::setup("summarizer", e))?;
        let labelers = config
            .labelers
            .iter()
            .map(|c| Backend::from_config(c.clone(), Some(Arc::clone(&cache))))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| PipelineError::setup("labelers", e))?;
        let companies = match &config.entities.companies {
            Some(path) => load_companies(path).map_err(|e| PipelineError::setup("entities.companies", e))?,
            None => reference_companies(),
        };
        let lexicon = match &config.entities.lexicon {
            Some(path) => FinancialLexicon::load(path, &config.normalization).map_err(|e| PipelineError::setup("entities.lexicon", e))?,
            None => FinancialLexicon::reference(),
        };
        let linker = Linker::new(
            companies,
            &lexicon,
            LinkerConfig {
                threshold: config.entities.threshold,
                ..LinkerConfig::default()
            },
            &config.normalization,
        )
        .map_err(|e| PipelineError::setup("entities", e))?;
        let ner = match &config.entities.ner_endpoint {
            Some(endpoint) => Some(
                HttpNer::new(endpoint.clone(), Duration::from_millis(config.entities.ner_timeout_ms))
                    .map_err(|e| PipelineError::setup("entities.ner_endpoint", e))?,
            ),
            None => None,
        };
        let e = &config.embedding;
        let embedder: Option<Box<dyn EmbeddingProvider>> = match e.provider {
            EmbeddingProviderKind::Hashing => Some(Box::new(HashingEmbedder::new(e.dims))),
            EmbeddingProviderKind::Http => Some(Box::new(
                HttpEmbedder::new(
                    e.endpoint.clone().unwrap_or_default(),
                    e.model.clone(),
                    e.api_key_env.clone(),
                    Duration::from_millis(e.timeout_ms),
                )
                .map_err(|err| PipelineError::setup("embedding", err))?,
            )),
            EmbeddingProviderKind::None => None,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| PipelineError::setup("worker pool", e))?;
        Ok(Self {
            config,
            out,
            store,
            summarizer,
            labelers,
            linker,
            ner,
            embedder,
            pool,
            cancel: Arc::new(AtomicBool::new(false)),
            progress: None,
        })
    }

    /// Shares a flag that stops the run between documents once set.
    pub fn with_cancel_flag(mut self, flag: Arc<AtomicBool>) -> Self {
        self.cancel = flag;
        self
    }

    /// Called with the stage name and the running count of freshly
    /// checkpointed documents after each checkpoint write.
    pub fn with_progress(mut self, hook: impl Fn(&str, usize) + Send + Sync + 'static) -> Self {
        self.progress = Some(Arc::new(hook));
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    pub fn linker(&self) -> &Linker {
        &self.linker
    }

    pub fn labelers(&self) -> &[Backend] {
        &self.labelers
    }

    fn backends(&self) -> impl Iterator<Item = &Backend> {
        std::iter::once(&self.summarizer).chain(self.labelers.iter())
    }

    fn snapshot_stats(&self) -> BTreeMap<String, BackendStats> {
        self.backends().map(|b| (b.model_id().to_string(), b.stats())).collect()
    }

    pub(super) fn read_stage<T: DeserializeOwned>(&self, file: &str, producer: &'static str) -> Result<Vec<T>, PipelineError> {
        let path = self.path(file);
        if !path.exists() {
            return Err(PipelineError::MissingInput { stage: producer, path });
        }
        Ok(read_jsonl(&path)?)
    }

    fn write_stage<T: Serialize>(&self, file: &str, records: &[T]) -> Result<(), PipelineError> {
        Ok(write_jsonl(self.path(file), records)?)
    }

    /// Runs `f` over `docs` on the worker pool, reusing checkpoints whose
    /// input fingerprint matches. Results come back in input order.
    fn process<T, F>(
        &self,
        stage: &'static str,
        docs: &[Document],
        input_key: impl Fn(&Document) -> String + Sync,
        f: F,
    ) -> Result<(Vec<Outcome<T>>, usize), PipelineError>
    where
        T: Serialize + DeserializeOwned + Send,
        F: Fn(&Document) -> Result<T, String> + Sync,
    {
        let snapshot = self.store.load(stage)?;
        let fresh = AtomicUsize::new(0);
        let resumed = AtomicUsize::new(0);
        let results: Vec<Result<Outcome<T>, PipelineError>> = self.pool.install(|| {
            docs.par_iter()
                .map(|doc| {
                    let key = input_key(doc);
                    if let Some(payload) = snapshot.payload(&doc.id) {
                        if let Ok(saved) = serde_json::from_value::<Checkpointed<T>>(payload.clone()) {
                            if saved.input == key {
                                resumed.fetch_add(1, Ordering::Relaxed);
                                return Ok(Outcome::Done(saved.output));
                            }
                        }
                    }
                    if self.cancel.load(Ordering::SeqCst) {
                        return Ok(Outcome::Cancelled);
                    }
                    match f(doc) {
                        Ok(output) => {
                            let saved = Checkpointed { input: key, output };
                            self.store.record(stage, &doc.id, &saved)?;
                            let n = fresh.fetch_add(1, Ordering::SeqCst) + 1;
                            if let Some(hook) = &self.progress {
                                hook(stage, n);
                            }
                            Ok(Outcome::Done(saved.output))
                        }
                        Err(message) => Ok(Outcome::Failed(message)),
                    }
                })
                .collect()
        });
        let outcomes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        if outcomes.iter().any(|o| matches!(o, Outcome::Cancelled)) {
            return Err(PipelineError::Cancelled { stage });
        }
        Ok((outcomes, resumed.into_inner()))
    }

    fn update_errors(&self, stage: &str, mut fresh: Vec<ErrorRecord>) -> Result<(), PipelineError> {
        let path = self.path(files::ERRORS);
        let mut all: Vec<ErrorRecord> = if path.exists() { read_jsonl(&path)? } else { Vec::new() };
        all.retain(|e| e.stage != stage);
        all.append(&mut fresh);
        let rank = |s: &str| STAGES.iter().position(|x| *x == s).unwrap_or(STAGES.len());
        all.sort_by(|a, b| rank(&a.stage).cmp(&rank(&b.stage)).then(a.document_id.cmp(&b.document_id)));
        self.write_stage(files::ERRORS, &all)
    }

    fn finish_stage(
        &self,
        stage: &str,
        counts: StageCounts,
        resumed: usize,
        started: Instant,
        before: Option<BTreeMap<String, BackendStats>>,
        notes: BTreeMap<String, String>,
    ) -> Result<StageReport, PipelineError> {
        let backend_calls = match before {
            Some(before) => self
                .snapshot_stats()
                .into_iter()
                .map(|(k, after)| {
                    let delta = stats_delta(&before[&k], &after);
                    (k, delta)
                })
                .filter(|(_, d)| d.requests > 0)
                .collect(),
            None => BTreeMap::new(),
        };
        let report = StageReport {
            stage: stage.to_string(),
            counts,
            resumed,
            wall_clock_ms: started.elapsed().as_millis() as u64,
            backend_calls,
            notes,
        };
        log::info!(
            "{stage}: in {} out {} dropped {} quarantined {} errored {} (resumed {})",
            counts.input,
            counts.output,
            counts.dropped,
            counts.quarantined,
            counts.errored,
            resumed
        );
        self.write_manifest(Some(&report))?;
        Ok(report)
    }

    pub fn ingest(&self, docs: &[Document]) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let mut docs = docs.to_vec();
        for d in &mut docs {
            d.stage = Stage::Ingested;
        }
        self.write_stage(files::INGESTED, &docs)?;
        let counts = StageCounts {
            input: docs.len(),
            output: docs.len(),
            ..Default::default()
        };
        self.finish_stage("ingest", counts, 0, started, None, BTreeMap::new())
    }

    pub fn normalize(&self) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let docs: Vec<Document> = self.read_stage(files::INGESTED, "ingest")?;
        let cfg = &self.config.normalization;
        let cfg_key = fingerprint(cfg);
        let (outcomes, resumed) = self.process(
            "normalize",
            &docs,
            |d| fingerprint(&(&cfg_key, &d.text)),
            |d| {
                let normalized = normalize_text(&d.text, cfg);
                if normalized.trim().is_empty() {
                    return Err("text is empty after normalization".into());
                }
                Ok((word_count(&normalized), normalized))
            },
        )?;
        let mut out = Vec::new();
        let mut errors = Vec::new();
        for (doc, outcome) in docs.iter().zip(outcomes) {
            match outcome {
                Outcome::Done((n, text)) => {
                    let mut d = doc.clone();
                    d.normalized_text = text;
                    d.word_count = n;
                    d.stage = Stage::Normalized;
                    out.push(d);
                }
                Outcome::Failed(message) => errors.push(ErrorRecord {
                    document_id: doc.id.clone(),
                    stage: "normalize".into(),
                    message,
                }),
                Outcome::Cancelled => unreachable!("cancellation is reported as an error"),
            }
        }
        self.write_stage(files::NORMALIZED, &out)?;
        let counts = StageCounts {
            input: docs.len(),
            output: out.len(),
            errored: errors.len(),
            ..Default::default()
        };
        self.update_errors("normalize", errors)?;
        self.finish_stage("normalize", counts, resumed, started, None, BTreeMap::new())
    }

    pub fn dedup(&self) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let docs: Vec<Document> = self.read_stage(files::NORMALIZED, "normalize")?;
        let mut cfg = self.config.dedup.clone();
        if self.embedder.is_none() {
            cfg.semantic = false;
        }
        // the pass is corpus-wide, so its checkpoint is only reusable when
        // the whole input is unchanged
        let corpus_key = fingerprint(&(
            &cfg,
            self.embedder.as_ref().map(|e| e.name().to_string()),
            docs.iter().map(|d| (&d.id, &d.normalized_text, d.published_at)).collect::<Vec<_>>(),
        ));
        let snapshot = self.store.load("dedup")?;
        let saved: Option<Vec<DedupDecision>> = docs
            .iter()
            .map(|d| {
                let payload = snapshot.payload(&d.id)?;
                let c: Checkpointed<DedupDecision> = serde_json::from_value(payload.clone()).ok()?;
                (c.input == corpus_key).then_some(c.output)
            })
            .collect();
        let mut notes = BTreeMap::new();
        let (decisions, resumed) = match saved {
            Some(d) => (d, docs.len()),
            None if docs.is_empty() => (Vec::new(), 0),
            None => {
                if self.cancel.load(Ordering::SeqCst) {
                    return Err(PipelineError::Cancelled { stage: "dedup" });
                }
                let report = dedup_pass(&docs, &cfg, self.embedder.as_deref()).map_err(|e| PipelineError::setup("dedup", e))?;
                if report.semantic_degraded {
                    notes.insert("semantic_degraded".into(), "true".into());
                }
                for d in &report.decisions {
                    self.store.record(
                        "dedup",
                        &d.document_id,
                        &Checkpointed {
                            input: corpus_key.clone(),
                            output: d.clone(),
                        },
                    )?;
                }
                (report.decisions, 0)
            }
        };
        let keep: BTreeSet<&str> = decisions
            .iter()
            .filter(|d| d.verdict == Verdict::Keep)
            .map(|d| d.document_id.as_str())
            .collect();
        let out: Vec<Document> = docs
            .iter()
            .filter(|d| keep.contains(d.id.as_str()))
            .cloned()
            .map(|mut d| {
                d.stage = Stage::Deduped;
                d
            })
            .collect();
        for verdict in [Verdict::DropExact, Verdict::DropNear, Verdict::DropSemantic] {
            let n = decisions.iter().filter(|d| d.verdict == verdict).count();
            notes.insert(format!("{verdict:?}").to_lowercase(), n.to_string());
        }
        self.write_stage(files::DEDUP_AUDIT, &decisions)?;
        self.write_stage(files::DEDUPED, &out)?;
        let counts = StageCounts {
            input: docs.len(),
            output: out.len(),
            dropped: docs.len() - out.len(),
            ..Default::default()
        };
        self.finish_stage("dedup", counts, resumed, started, None, notes)
    }

    pub fn link(&self) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let docs: Vec<Document> = self.read_stage(files::DEDUPED, "dedup")?;
        let cfg_key = fingerprint(&(&self.config.entities, &self.config.normalization));
        let ner = self.ner.as_ref().map(|n| n as &dyn NerProvider);
        let (outcomes, resumed) = self.process(
            "link",
            &docs,
            |d| fingerprint(&(&cfg_key, &d.normalized_text)),
            |d| {
                let mut doc = d.clone();
                let outcome = self.linker.link_document(&mut doc, ner);
                Ok((doc.company_ids, outcome.links, outcome.ner_degraded))
            },
        )?;
        let mut out = Vec::new();
        let mut links: Vec<EntityLink> = Vec::new();
        let mut degraded = 0;
        for (doc, outcome) in docs.iter().zip(outcomes) {
            if let Outcome::Done((ids, doc_links, ner_degraded)) = outcome {
                let mut d = doc.clone();
                d.company_ids = ids;
                d.stage = Stage::Linked;
                out.push(d);
                links.extend(doc_links);
                degraded += usize::from(ner_degraded);
            }
        }
        self.write_stage(files::LINKED, &out)?;
        self.write_stage(files::LINKS, &links)?;
        let mut notes = BTreeMap::new();
        notes.insert("links".into(), links.len().to_string());
        if degraded > 0 {
            notes.insert("ner_degraded_documents".into(), degraded.to_string());
        }
        let counts = StageCounts {
            input: docs.len(),
            output: out.len(),
            ..Default::default()
        };
        self.finish_stage("link", counts, resumed, started, None, notes)
    }

    pub fn route(&self) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let docs: Vec<Document> = self.read_stage(files::LINKED, "link")?;
        let boundary = self.config.route_boundary;
        let (outcomes, resumed) = self.process(
            "route",
            &docs,
            |d| fingerprint(&(boundary, d.word_count)),
            |d| Ok(route_with_boundary(d, boundary)),
        )?;
        let decisions: Vec<RouteDecision> = outcomes
            .into_iter()
            .filter_map(|o| match o {
                Outcome::Done(r) => Some(r),
                _ => None,
            })
            .collect();
        let out: Vec<Document> = docs
            .iter()
            .cloned()
            .map(|mut d| {
                d.stage = Stage::Routed;
                d
            })
            .collect();
        self.write_stage(files::ROUTED, &out)?;
        self.write_stage(files::ROUTES, &decisions)?;
        let mut notes = BTreeMap::new();
        let summarize = decisions.iter().filter(|r| r.route == Route::SummarizeFirst).count();
        notes.insert("summarize_first".into(), summarize.to_string());
        notes.insert("direct_to_labeling".into(), (decisions.len() - summarize).to_string());
        let counts = StageCounts {
            input: docs.len(),
            output: out.len(),
            ..Default::default()
        };
        self.finish_stage("route", counts, resumed, started, None, notes)
    }

    fn routed_documents(&self) -> Result<(Vec<Document>, HashMap<String, Route>), PipelineError> {
        let docs: Vec<Document> = self.read_stage(files::ROUTED, "route")?;
        let routes: Vec<RouteDecision> = self.read_stage(files::ROUTES, "route")?;
        let routes = routes.into_iter().map(|r| (r.document_id, r.route)).collect();
        Ok((docs, routes))
    }

    pub fn summarize(&self) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let before = self.snapshot_stats();
        let (docs, routes) = self.routed_documents()?;
        let todo: Vec<Document> = docs
            .into_iter()
            .filter(|d| routes.get(&d.id) == Some(&Route::SummarizeFirst))
            .collect();
        let backend_key = fingerprint(&(&self.config.summarizer, self.config.chunk_words));
        let (outcomes, resumed) = self.process(
            "summarize",
            &todo,
            |d| fingerprint(&(&backend_key, &d.normalized_text)),
            |d| summarize_document(d, &self.summarizer, self.config.chunk_words).map_err(|e| e.to_string()),
        )?;
        let mut summaries = Vec::new();
        let mut errors = Vec::new();
        for (doc, outcome) in todo.iter().zip(outcomes) {
            match outcome {
                Outcome::Done(s) => summaries.push(s),
                Outcome::Failed(message) => errors.push(ErrorRecord {
                    document_id: doc.id.clone(),
                    stage: "summarize".into(),
                    message,
                }),
                Outcome::Cancelled => unreachable!("cancellation is reported as an error"),
            }
        }
        self.write_stage(files::SUMMARIES, &summaries)?;
        let counts = StageCounts {
            input: todo.len(),
            output: summaries.len(),
            errored: errors.len(),
            ..Default::default()
        };
        self.update_errors("summarize", errors)?;
        self.finish_stage("summarize", counts, resumed, started, Some(before), BTreeMap::new())
    }

    /// Routed documents that reach labeling, with the text each is labeled
    /// on.
    fn label_inputs(&self) -> Result<Vec<(Document, LabelInput, String)>, PipelineError> {
        let (docs, routes) = self.routed_documents()?;
        let needs_summaries = routes.values().any(|r| *r == Route::SummarizeFirst);
        let summaries: HashMap<String, SummaryRecord> = if needs_summaries {
            self.read_stage::<SummaryRecord>(files::SUMMARIES, "summarize")?
                .into_iter()
                .map(|s| (s.document_id.clone(), s))
                .collect()
        } else {
            HashMap::new()
        };
        Ok(docs
            .into_iter()
            .filter_map(|d| match routes.get(&d.id) {
                Some(Route::DirectToLabeling) => {
                    let text = d.normalized_text.clone();
                    Some((d, LabelInput::NormalizedText, text))
                }
                Some(Route::SummarizeFirst) => {
                    let text = summaries.get(&d.id)?.final_summary.clone();
                    Some((d, LabelInput::Summary, text))
                }
                None => None,
            })
            .collect())
    }

    pub fn label(&self) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let before = self.snapshot_stats();
        let inputs = self.label_inputs()?;
        let texts: HashMap<&str, &str> = inputs.iter().map(|(d, _, t)| (d.id.as_str(), t.as_str())).collect();
        let docs: Vec<Document> = inputs.iter().map(|(d, _, _)| d.clone()).collect();
        let backend_key = fingerprint(&self.config.labelers);
        let (outcomes, resumed) = self.process(
            "label",
            &docs,
            |d| fingerprint(&(&backend_key, texts[d.id.as_str()])),
            |d| collect_votes(&d.id, texts[d.id.as_str()], &self.labelers).map_err(|e| e.to_string()),
        )?;
        let mut votes = Vec::new();
        let mut errors = Vec::new();
        for (doc, outcome) in docs.iter().zip(outcomes) {
            match outcome {
                Outcome::Done(v) => votes.push(v),
                Outcome::Failed(message) => errors.push(ErrorRecord {
                    document_id: doc.id.clone(),
                    stage: "label".into(),
                    message,
                }),
                Outcome::Cancelled => unreachable!("cancellation is reported as an error"),
            }
        }
        self.write_stage(files::VOTES, &votes)?;
        let mut notes = BTreeMap::new();
        let violations: usize = votes.iter().map(|v: &VoteRecord| v.invalid.len()).sum();
        notes.insert("taxonomy_violations".into(), violations.to_string());
        let counts = StageCounts {
            input: docs.len(),
            output: votes.len(),
            errored: errors.len(),
            ..Default::default()
        };
        self.update_errors("label", errors)?;
        self.finish_stage("label", counts, resumed, started, Some(before), notes)
    }

    pub fn consensus(&self) -> Result<StageReport, PipelineError> {
        let started = Instant::now();
        let inputs = self.label_inputs()?;
        let votes: Vec<VoteRecord> = self.read_stage(files::VOTES, "label")?;
        let by_id: HashMap<&str, &(Document, LabelInput, String)> = inputs.iter().map(|x| (x.0.id.as_str(), x)).collect();
        let mut labeled = Vec::new();
        let mut quarantine: Vec<QuarantineRecord> = Vec::new();
        let mut errors = Vec::new();
        for record in &votes {
            let Some((doc, input, _)) = by_id.get(record.document_id.as_str()) else {
                continue;
            };
            match decide(record) {
                Ok(LabelOutcome::Consensus(consensus)) => {
                    let mut document = doc.clone();
                    document.stage = Stage::Finalized;
                    labeled.push(LabeledRecord {
                        document,
                        label_input: *input,
                        consensus,
                    });
                }
                Ok(LabelOutcome::Quarantine(q)) => quarantine.push(q),
                Err(e) => errors.push(ErrorRecord {
                    document_id: record.document_id.clone(),
                    stage: "consensus".into(),
                    message: e.to_string(),
                }),
            }
        }
        self.write_stage(files::LABELED, &labeled)?;
        self.write_stage(files::QUARANTINE, &quarantine)?;
        let mut notes = BTreeMap::new();
        for outcome in [ConsensusOutcome::Full, ConsensusOutcome::Majority, ConsensusOutcome::Disagreement] {
            let n = labeled.iter().filter(|r| r.consensus.outcome == outcome).count();
            notes.insert(format!("{outcome:?}").to_lowercase(), n.to_string());
        }
        let counts = StageCounts {
            input: votes.len(),
            output: labeled.len(),
            quarantined: quarantine.len(),
            errored: errors.len(),
            ..Default::default()
        };
        self.update_errors("consensus", errors)?;
        self.finish_stage("consensus", counts, 0, started, None, notes)
    }

    /// Every stage in order, starting from `docs`.
    pub fn run(&self, docs: &[Document]) -> Result<RunManifest, PipelineError> {
        self.ingest(docs)?;
        self.normalize()?;
        self.dedup()?;
        self.link()?;
        self.route()?;
        self.summarize()?;
        self.label()?;
        self.consensus()?;
        self.manifest()
    }

    pub fn run_id(&self) -> String {
        let ingested = std::fs::read(self.path(files::INGESTED)).unwrap_or_default();
        fingerprint(&(fingerprint(&self.config), hex::encode(Sha256::digest(&ingested))))
    }

    fn count_file(&self, file: &str) -> Result<usize, PipelineError> {
        let path = self.path(file);
        if !path.exists() {
            return Ok(0);
        }
        Ok(read_jsonl::<serde_json::Value>(&path)?.len())
    }

    fn cost_summary(&self) -> Result<CostSummary, PipelineError> {
        let pricing: HashMap<&str, _> = self.backends().map(|b| (b.model_id(), b.config().pricing)).collect();
        let mut per_model: BTreeMap<String, ModelUsage> = BTreeMap::new();
        let mut add = |model: &str, usage: TokenUsage| {
            let price = pricing.get(model).copied().unwrap_or_default();
            let entry = per_model.entry(model.to_string()).or_insert(ModelUsage {
                usage: TokenUsage::default(),
                cost_usd: 0.0,
            });
            entry.usage += usage;
            entry.cost_usd = estimate_cost(entry.usage, &price);
        };
        if self.path(files::SUMMARIES).exists() {
            for s in read_jsonl::<SummaryRecord>(self.path(files::SUMMARIES))? {
                add(&s.backend_id, s.usage_total);
            }
        }
        let mut labeled_documents = 0;
        if self.path(files::VOTES).exists() {
            for v in read_jsonl::<VoteRecord>(self.path(files::VOTES))? {
                labeled_documents += 1;
                for vote in &v.votes {
                    add(&vote.model_id, vote.usage);
                }
            }
        }
        let attributed: f64 = per_model.values().map(|m| m.cost_usd).sum();
        let per_sample = if labeled_documents == 0 {
            0.0
        } else {
            attributed / labeled_documents as f64
        };
        Ok(CostSummary {
            attributed_cost_usd: attributed,
            billed_cost_usd: 0.0,
            labeled_documents,
            cost_per_sample_usd: per_sample,
            max_cost_per_sample_usd: self.config.max_cost_per_sample_usd,
            ceiling_exceeded: per_sample > self.config.max_cost_per_sample_usd,
            per_model,
        })
    }

    fn terminal_counts(&self) -> Result<TerminalCounts, PipelineError> {
        let ingested = self.count_file(files::INGESTED)?;
        let dropped_duplicate = if self.path(files::DEDUP_AUDIT).exists() {
            read_jsonl::<DedupDecision>(self.path(files::DEDUP_AUDIT))?
                .iter()
                .filter(|d| d.verdict != Verdict::Keep)
                .count()
        } else {
            0
        };
        let errored = if self.path(files::ERRORS).exists() {
            read_jsonl::<ErrorRecord>(self.path(files::ERRORS))?
                .into_iter()
                .map(|e| e.document_id)
                .collect::<BTreeSet<_>>()
                .len()
        } else {
            0
        };
        let finalized = self.count_file(files::LABELED)?;
        let quarantined = self.count_file(files::QUARANTINE)?;
        let done = finalized + dropped_duplicate + quarantined + errored;
        Ok(TerminalCounts {
            ingested,
            finalized,
            dropped_duplicate,
            quarantined,
            errored,
            in_progress: ingested.saturating_sub(done),
        })
    }

    fn write_manifest(&self, update: Option<&StageReport>) -> Result<RunManifest, PipelineError> {
        let path = self.path(files::MANIFEST);
        let mut stages: Vec<StageReport> = std::fs::read(&path)
            .ok()
            .and_then(|b| serde_json::from_slice::<RunManifest>(&b).ok())
            .map(|m| m.stages)
            .unwrap_or_default();
        if let Some(report) = update {
            if report.stage == "ingest" {
                stages.clear();
            }
            stages.retain(|s| s.stage != report.stage);
            stages.push(report.clone());
            let rank = |s: &str| STAGES.iter().position(|x| *x == s).unwrap_or(STAGES.len());
            stages.sort_by_key(|s| rank(&s.stage));
        }
        let terminal = self.terminal_counts()?;
        let mut cost = self.cost_summary()?;
        cost.billed_cost_usd = stages
            .iter()
            .flat_map(|s| s.backend_calls.values())
            .map(|b| b.billed_cost_usd)
            .sum();
        let manifest = RunManifest {
            run_id: self.run_id(),
            config: self.config.clone(),
            conserved: stages.iter().all(|s| s.counts.is_conserved())
                && terminal.ingested
                    == terminal.finalized + terminal.dropped_duplicate + terminal.quarantined + terminal.errored + terminal.in_progress,
            error_rate: if terminal.ingested == 0 {
                0.0
            } else {
                terminal.errored as f64 / terminal.ingested as f64
            },
            stages,
            terminal,
            cost,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, json + "\n").map_err(|source| PipelineError::Io { path, source })?;
        Ok(manifest)
    }

    /// Current manifest, recomputed from the run directory.
    pub fn manifest(&self) -> Result<RunManifest, PipelineError> {
        self.write_manifest(None)
    }
}

/// Loads a corpus file and runs every stage into `out`.
pub fn run_pipeline(corpus: impl AsRef<Path>, config: RunConfig, out: impl Into<PathBuf>) -> Result<RunManifest, PipelineError> {
    let pipeline = Pipeline::open(config, out)?;
    let docs = crate::corpus::load_jsonl(corpus)?;
    pipeline.run(&docs)
}
