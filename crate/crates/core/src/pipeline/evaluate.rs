//! Run-level evaluation over the files of a finished run directory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::consensus::VoteRecord;
use super::run::{files, LabeledRecord, Pipeline, PipelineError};
use super::summarize::SummaryRecord;
use crate::corpus::{read_jsonl, CorpusError};
use crate::metrics::{
    agreement_report, classification_report, cost_quality_table, score_summary, AgreementReport, ClassificationReport,
    CostQualityTable, CostThresholds, ModelCost, SummQualityReport,
};
use crate::{Document, SentimentLabel};

/// Name under which the consensus labels appear in benchmark tables.
pub const CONSENSUS_MODEL: &str = "consensus";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub label: SentimentLabel,
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<BTreeMap<String, SentimentLabel>, CorpusError> {
    Ok(read_jsonl::<TruthRecord>(path)?.into_iter().map(|t| (t.id, t.label)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub model: String,
    /// Gold-labeled documents this model produced a valid label for.
    pub evaluated: usize,
    pub report: ClassificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvaluation {
    pub run_id: String,
    /// Over documents where every labeler gave a valid label; absent with
    /// fewer than two such documents.
    pub agreement: Option<AgreementReport>,
    pub agreement_items: usize,
    pub summary_quality: SummQualityReport,
    /// Empty without gold labels.
    pub benchmark: Vec<BenchmarkEntry>,
    pub cost_quality: Option<CostQualityTable>,
}

impl RunEvaluation {
    pub fn benchmark_pairs(&self) -> Vec<(String, ClassificationReport)> {
        self.benchmark.iter().map(|b| (b.model.clone(), b.report.clone())).collect()
    }

    pub fn benchmark_for(&self, model: &str) -> Option<&BenchmarkEntry> {
        self.benchmark.iter().find(|b| b.model == model)
    }
}

fn benchmark(model: &str, pairs: &[(SentimentLabel, SentimentLabel)]) -> Result<Option<BenchmarkEntry>, PipelineError> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let (gold, pred): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
    Ok(Some(BenchmarkEntry {
        model: model.to_string(),
        evaluated: pairs.len(),
        report: classification_report(&gold, &pred)?,
    }))
}

impl Pipeline {
    /// Agreement, summary quality and, given gold labels, per-model
    /// benchmarks and the cost-quality ranking.
    pub fn evaluate(&self, truth: Option<&BTreeMap<String, SentimentLabel>>) -> Result<RunEvaluation, PipelineError> {
        let manifest = self.manifest()?;
        let votes: Vec<VoteRecord> = self.read_stage(files::VOTES, "label")?;
        let labeled: Vec<LabeledRecord> = self.read_stage(files::LABELED, "consensus")?;
        let labeler_ids: Vec<String> = self.labelers().iter().map(|b| b.model_id().to_string()).collect();

        let mut per_model: BTreeMap<String, Vec<SentimentLabel>> = labeler_ids.iter().map(|m| (m.clone(), Vec::new())).collect();
        let mut agreement_items = 0;
        for record in &votes {
            let by_model: HashMap<&str, SentimentLabel> = record.votes.iter().map(|v| (v.model_id.as_str(), v.label)).collect();
            if labeler_ids.iter().all(|m| by_model.contains_key(m.as_str())) {
                agreement_items += 1;
                for m in &labeler_ids {
                    per_model.get_mut(m).expect("labeler").push(by_model[m.as_str()]);
                }
            }
        }
        let consensus: Vec<_> = labeled.iter().map(|r| r.consensus.clone()).collect();
        let agreement = if agreement_items >= 2 {
            Some(agreement_report(&per_model, &consensus)?)
        } else {
            None
        };

        let summaries: Vec<SummaryRecord> = if self.path(files::SUMMARIES).exists() {
            read_jsonl(self.path(files::SUMMARIES))?
        } else {
            Vec::new()
        };
        let docs: HashMap<String, Document> = self
            .read_stage::<Document>(files::ROUTED, "route")?
            .into_iter()
            .map(|d| (d.id.clone(), d))
            .collect();
        let mut series = Vec::new();
        for s in &summaries {
            let Some(doc) = docs.get(&s.document_id) else { continue };
            let linked: BTreeSet<String> = self
                .linker()
                .link_text(&doc.id, &s.final_summary, None)
                .links
                .into_iter()
                .map(|l| l.company_id)
                .collect();
            let linked: Vec<String> = linked.into_iter().collect();
            series.push(score_summary(
                &doc.id,
                doc.source,
                &doc.normalized_text,
                &s.final_summary,
                Some((&doc.company_ids, &linked)),
            )?);
        }
        let summary_quality = SummQualityReport::from_scores(series);

        let mut bench = Vec::new();
        let mut cost_quality = None;
        if let Some(truth) = truth {
            for m in &labeler_ids {
                let pairs: Vec<_> = votes
                    .iter()
                    .filter_map(|r| {
                        let gold = truth.get(&r.document_id)?;
                        let vote = r.votes.iter().find(|v| &v.model_id == m)?;
                        Some((*gold, vote.label))
                    })
                    .collect();
                bench.extend(benchmark(m, &pairs)?);
            }
            let pairs: Vec<_> = labeled
                .iter()
                .filter_map(|r| Some((*truth.get(&r.document.id)?, r.consensus.final_label?)))
                .collect();
            bench.extend(benchmark(CONSENSUS_MODEL, &pairs)?);
            let costs: Vec<ModelCost> = bench
                .iter()
                .filter(|b| b.model != CONSENSUS_MODEL)
                .map(|b| ModelCost {
                    model: b.model.clone(),
                    macro_f1: b.report.macro_f1,
                    cost_usd: manifest.cost.per_model.get(&b.model).map_or(0.0, |u| u.cost_usd),
                })
                .collect();
            if !costs.is_empty() {
                cost_quality = Some(cost_quality_table(&costs, CostThresholds::default())?);
            }
        }
        Ok(RunEvaluation {
            run_id: manifest.run_id,
            agreement,
            agreement_items,
            summary_quality,
            benchmark: bench,
            cost_quality,
        })
    }

    /// Writes the evaluation as JSON plus the per-summary series as CSV.
    pub fn write_evaluation(&self, evaluation: &RunEvaluation) -> Result<(), PipelineError> {
        let json = serde_json::to_string_pretty(evaluation).expect("evaluation serializes") + "\n";
        for (file, body) in [
            (files::EVALUATION, json),
            (files::SUMMARY_SERIES, evaluation.summary_quality.series_csv()),
        ] {
            let path = self.path(file);
            std::fs::write(&path, body).map_err(|source| PipelineError::Io { path, source })?;
        }
        Ok(())
    }
}
