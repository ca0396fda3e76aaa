//! Ranked cost-quality tables and Markdown renderers.

use serde::{Deserialize, Serialize};

use super::classification::ClassificationReport;
use super::summary::SummQualityReport;
use super::MetricsError;
use crate::{SentimentLabel, Source};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCost {
    pub model: String,
    pub macro_f1: f64,
    pub cost_usd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostThresholds {
    pub min_macro_f1: f64,
    pub deploy_max_cost_usd: f64,
    pub low_cost_max_usd: f64,
}

impl Default for CostThresholds {
    fn default() -> Self {
        Self {
            min_macro_f1: 0.70,
            deploy_max_cost_usd: 50.0,
            low_cost_max_usd: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostCategory {
    DeploymentReady,
    LowCostExploratory,
    HighCostInefficient,
}

impl CostCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            CostCategory::DeploymentReady => "deployment_ready",
            CostCategory::LowCostExploratory => "low_cost_exploratory",
            CostCategory::HighCostInefficient => "high_cost_inefficient",
        }
    }

    pub fn classify(entry: &ModelCost, t: &CostThresholds) -> Self {
        if entry.macro_f1 >= t.min_macro_f1 && entry.cost_usd <= t.deploy_max_cost_usd {
            CostCategory::DeploymentReady
        } else if entry.cost_usd <= t.low_cost_max_usd {
            CostCategory::LowCostExploratory
        } else {
            CostCategory::HighCostInefficient
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostQualityRow {
    pub rank: usize,
    pub model: String,
    pub macro_f1: f64,
    pub cost_usd: f64,
    pub category: CostCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostQualityTable {
    pub thresholds: CostThresholds,
    pub rows: Vec<CostQualityRow>,
}

/// Ranks models by macro-F1 (descending), then by cost (ascending), then by
/// name.
pub fn cost_quality_table(entries: &[ModelCost], thresholds: CostThresholds) -> Result<CostQualityTable, MetricsError> {
    if entries.is_empty() {
        return Err(MetricsError::TooFew { min: 1, got: 0 });
    }
    let mut sorted: Vec<&ModelCost> = entries.iter().collect();
    sorted.sort_by(|a, b| {
        b.macro_f1
            .total_cmp(&a.macro_f1)
            .then(a.cost_usd.total_cmp(&b.cost_usd))
            .then(a.model.cmp(&b.model))
    });
    let rows = sorted
        .into_iter()
        .enumerate()
        .map(|(i, e)| CostQualityRow {
            rank: i + 1,
            model: e.model.clone(),
            macro_f1: e.macro_f1,
            cost_usd: e.cost_usd,
            category: CostCategory::classify(e, &thresholds),
        })
        .collect();
    Ok(CostQualityTable { thresholds, rows })
}

impl CostQualityTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,model,macro_f1,cost_usd,category\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.6},{:.6},{}\n", r.rank, r.model, r.macro_f1, r.cost_usd, r.category.as_str()));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.rank.to_string(),
                    r.model.clone(),
                    fmt3(r.macro_f1),
                    format!("{:.4}", r.cost_usd),
                    r.category.as_str().to_string(),
                ]
            })
            .collect();
        markdown_table(&["Rank", "Model", "Macro-F1", "Cost (USD)", "Category"], rows)
    }
}

pub fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

/// Pipe table with columns padded to equal width; the first column is left
/// aligned and the rest centered.
pub fn markdown_table(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count().max(3)).collect();
    for row in &rows {
        for (i, cell) in row.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w - s.chars().count()));
    let line = |cells: Vec<String>| format!("| {} |\n", cells.join(" | "));
    let mut out = line(header.iter().enumerate().map(|(i, h)| pad(h, widths[i])).collect());
    out.push_str(&line(
        widths
            .iter()
            .enumerate()
            .map(|(i, w)| if i == 0 { "-".repeat(*w) } else { format!(":{}:", "-".repeat(w - 2)) })
            .collect(),
    ));
    for row in rows {
        out.push_str(&line(
            (0..cols)
                .map(|i| pad(row.get(i).map(String::as_str).unwrap_or(""), widths[i]))
                .collect(),
        ));
    }
    out
}

/// Summary quality by source: five metric rows, one column per source.
pub fn render_summary_table(report: &SummQualityReport) -> String {
    let kinds = [Source::News, Source::Social];
    let cell = |kind: Source, f: fn(&super::summary::SummaryMeans) -> f64| {
        report.by_source.get(&kind).map(|m| fmt3(f(m))).unwrap_or_else(|| "n/a".into())
    };
    let metrics: [(&str, fn(&super::summary::SummaryMeans) -> f64); 5] = [
        ("Compression Ratio", |m| m.compression_ratio),
        ("Cosine Similarity", |m| m.cosine_similarity),
        ("ROUGE-1", |m| m.rouge1),
        ("ROUGE-L", |m| m.rouge_l),
        ("Hallucination Ratio", |m| m.hallucination_ratio),
    ];
    let rows = metrics
        .iter()
        .map(|(name, f)| {
            let mut row = vec![name.to_string()];
            row.extend(kinds.iter().map(|k| cell(*k, *f)));
            row
        })
        .collect();
    markdown_table(&["Metric", "News", "Social"], rows)
}

/// Per-model benchmark: accuracy, weighted precision/recall/F1, macro-F1.
pub fn render_benchmark_table(models: &[(String, ClassificationReport)]) -> String {
    let rows = models
        .iter()
        .map(|(name, r)| {
            vec![
                name.clone(),
                fmt3(r.accuracy),
                fmt3(r.weighted_precision),
                fmt3(r.weighted_recall),
                fmt3(r.weighted_f1),
                fmt3(r.macro_f1),
            ]
        })
        .collect();
    markdown_table(&["Model", "Acc.", "Prec.", "Rec.", "F1", "Macro-F1"], rows)
}

fn class_title(label: SentimentLabel) -> &'static str {
    match label {
        SentimentLabel::StronglyPositive => "Strongly Pos.",
        SentimentLabel::Positive => "Positive",
        SentimentLabel::Neutral => "Neutral",
        SentimentLabel::Negative => "Negative",
        SentimentLabel::StronglyNegative => "Strongly Neg.",
    }
}

/// Per-class precision, recall and F1 from strongly positive down to strongly
/// negative, closed by the unweighted average.
pub fn render_class_table(report: &ClassificationReport) -> String {
    let mut rows: Vec<Vec<String>> = SentimentLabel::ALL
        .iter()
        .rev()
        .map(|label| {
            let c = &report.per_class[label.index()];
            vec![class_title(*label).to_string(), fmt3(c.precision), fmt3(c.recall), fmt3(c.f1)]
        })
        .collect();
    rows.push(vec![
        "Macro Avg.".into(),
        fmt3(report.macro_precision),
        fmt3(report.macro_recall),
        fmt3(report.macro_f1),
    ]);
    markdown_table(&["Class", "Precision", "Recall", "F1-Score"], rows)
}

/// A reference system scored elsewhere, supplied as input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScore {
    pub model: String,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Baselines first, then the evaluated models.
pub fn render_baseline_table(baselines: &[BaselineScore], models: &[(String, ClassificationReport)]) -> String {
    let rows = baselines
        .iter()
        .map(|b| (b.model.clone(), b.accuracy, b.macro_f1))
        .chain(models.iter().map(|(m, r)| (m.clone(), r.accuracy, r.macro_f1)))
        .map(|(m, a, f)| vec![m, fmt3(a), fmt3(f)])
        .collect();
    markdown_table(&["Model", "Accuracy", "Macro-F1"], rows)
}
