use serde::{Deserialize, Serialize};

use super::special::student_t_two_sided;
use super::MetricsError;
use crate::SentimentLabel;

/// Rows are gold labels, columns predictions, both in taxonomy order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: [SentimentLabel; 5],
    pub counts: [[u64; 5]; 5],
}

impl ConfusionMatrix {
    pub fn new(gold: &[SentimentLabel], pred: &[SentimentLabel]) -> Result<Self, MetricsError> {
        if gold.len() != pred.len() {
            return Err(MetricsError::LengthMismatch {
                left: gold.len(),
                right: pred.len(),
            });
        }
        let mut counts = [[0u64; 5]; 5];
        for (g, p) in gold.iter().zip(pred) {
            counts[g.index()][p.index()] += 1;
        }
        Ok(Self {
            classes: SentimentLabel::ALL,
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: SentimentLabel) -> u64 {
        self.counts[class.index()].iter().sum()
    }

    pub fn predicted(&self, class: SentimentLabel) -> u64 {
        self.counts.iter().map(|r| r[class.index()]).sum()
    }

    pub fn true_positives(&self, class: SentimentLabel) -> u64 {
        self.counts[class.index()][class.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub label: SentimentLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub n: usize,
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Mean over all five classes; a class never predicted contributes 0.
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_report(gold: &[SentimentLabel], pred: &[SentimentLabel]) -> Result<ClassificationReport, MetricsError> {
    let confusion = ConfusionMatrix::new(gold, pred)?;
    if gold.is_empty() {
        return Err(MetricsError::TooFew { min: 1, got: 0 });
    }
    let total = confusion.total();
    let per_class: Vec<ClassScores> = SentimentLabel::ALL
        .into_iter()
        .map(|label| {
            let tp = confusion.true_positives(label);
            let precision = ratio(tp, confusion.predicted(label));
            let recall = ratio(tp, confusion.support(label));
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores {
                label,
                precision,
                recall,
                f1,
                support: confusion.support(label),
            }
        })
        .collect();
    let weighted = |f: fn(&ClassScores) -> f64| per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64;
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / 5.0;
    let correct: u64 = SentimentLabel::ALL.into_iter().map(|l| confusion.true_positives(l)).sum();
    Ok(ClassificationReport {
        n: gold.len(),
        accuracy: ratio(correct, total),
        weighted_precision: weighted(|c| c.precision),
        weighted_recall: weighted(|c| c.recall),
        weighted_f1: weighted(|c| c.f1),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
        confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub dof: usize,
    pub p_value: f64,
    pub mean_difference: f64,
}

/// Paired two-sided t-test on `x - y`.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<PairedTTest, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFew { min: 2, got: x.len() });
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(MetricsError::DegenerateDifferences);
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let dof = d.len() - 1;
    Ok(PairedTTest {
        t,
        dof,
        p_value: student_t_two_sided(t, dof as f64),
        mean_difference: mean,
    })
}
