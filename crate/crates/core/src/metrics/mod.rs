//! Agreement statistics, summary quality, classification benchmarks,
//! significance tests and cost-quality ranking.

mod agreement;
mod classification;
mod report;
pub mod special;
mod summary;

pub use agreement::{
    agreement_rate, agreement_report, chi_square_independence, cohen_kappa, consensus_stats, contingency, fleiss_kappa,
    js_divergence, label_consistency, label_distribution, pearson, pearson_ordinal, AgreementReport, ChiSquare,
    ConsensusStats, Kappa, PairAgreement,
};
pub use classification::{classification_report, paired_t_test, ClassScores, ClassificationReport, ConfusionMatrix, PairedTTest};
pub use report::{
    cost_quality_table, fmt3, markdown_table, render_baseline_table, render_benchmark_table, render_class_table,
    render_summary_table, BaselineScore, CostCategory, CostQualityRow, CostQualityTable, CostThresholds, ModelCost,
};
pub use summary::{
    compression_ratio, cosine_sim, entity_hallucination_ratio, hallucination_ratio, hybrid_score, is_stopword, lcs_len,
    rouge_l, rouge_n, score_summary, Rouge, SummQualityReport, SummaryMeans, SummaryScores,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {min} items, got {got}")]
    TooFew { min: usize, got: usize },
    #[error("item {item} has {got} ratings, expected {expected}")]
    Ragged { item: usize, expected: usize, got: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("contingency table has negative or non-finite counts")]
    InvalidCounts,
    #[error("{axis} {index} of the contingency table sums to zero")]
    ZeroMarginal { axis: &'static str, index: usize },
    #[error("a {rows}x{cols} table has zero degrees of freedom")]
    ZeroDof { rows: usize, cols: usize },
    #[error("correlation undefined: {0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("paired differences have zero variance")]
    DegenerateDifferences,
    #[error("source text is empty")]
    EmptySource,
}
