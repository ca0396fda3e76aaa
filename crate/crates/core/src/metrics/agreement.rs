use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::special::chi_square_sf;
use super::MetricsError;
use crate::corpus::{ConsensusOutcome, ConsensusResult};
use crate::SentimentLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    /// Chance agreement was 1 (a single category everywhere), so the value is
    /// set to 1.0 by convention.
    pub degenerate: bool,
}

fn check_pair<T>(a: &[T], b: &[T], min: usize) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < min {
        return Err(MetricsError::TooFew { min, got: a.len() });
    }
    Ok(())
}

/// Cohen's κ for two raters over the same items.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<Kappa, MetricsError> {
    check_pair(a, b, 2)?;
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let mut ma: BTreeMap<&T, f64> = BTreeMap::new();
    let mut mb: BTreeMap<&T, f64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1.0;
        *mb.entry(y).or_default() += 1.0;
    }
    let po = agree / n;
    let pe: f64 = ma.iter().map(|(k, ca)| ca / n * mb.get(k).copied().unwrap_or(0.0) / n).sum();
    if (1.0 - pe).abs() < 1e-15 {
        return Ok(Kappa {
            value: 1.0,
            degenerate: true,
        });
    }
    Ok(Kappa {
        value: (po - pe) / (1.0 - pe),
        degenerate: false,
    })
}

/// Fleiss' κ; `votes[i]` holds every rater's label for item `i`.
pub fn fleiss_kappa<T: Ord, R: AsRef<[T]>>(votes: &[R]) -> Result<Kappa, MetricsError> {
    let Some(first) = votes.first() else {
        return Err(MetricsError::TooFew { min: 1, got: 0 });
    };
    let raters = first.as_ref().len();
    if raters < 2 {
        return Err(MetricsError::TooFew { min: 2, got: raters });
    }
    for (item, row) in votes.iter().enumerate() {
        if row.as_ref().len() != raters {
            return Err(MetricsError::Ragged {
                item,
                expected: raters,
                got: row.as_ref().len(),
            });
        }
    }
    let n = raters as f64;
    let items = votes.len() as f64;
    let mut totals: BTreeMap<&T, f64> = BTreeMap::new();
    let mut p_bar = 0.0;
    for row in votes {
        let mut counts: BTreeMap<&T, f64> = BTreeMap::new();
        for label in row.as_ref() {
            *counts.entry(label).or_default() += 1.0;
        }
        let sq: f64 = counts.values().map(|c| c * c).sum();
        p_bar += (sq - n) / (n * (n - 1.0));
        for (k, c) in counts {
            *totals.entry(k).or_default() += c;
        }
    }
    p_bar /= items;
    let pe: f64 = totals.values().map(|c| (c / (items * n)).powi(2)).sum();
    if (1.0 - pe).abs() < 1e-15 {
        return Ok(Kappa {
            value: 1.0,
            degenerate: true,
        });
    }
    Ok(Kappa {
        value: (p_bar - pe) / (1.0 - pe),
        degenerate: false,
    })
}

fn check_distribution(p: &[f64], name: &str) -> Result<(), MetricsError> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(MetricsError::InvalidDistribution(format!("{name} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(MetricsError::InvalidDistribution(format!("{name} sums to {sum}")));
    }
    Ok(())
}

fn kl_base2(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).log2())
        .sum()
}

/// Jensen–Shannon divergence in bits, in `[0, 1]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64, MetricsError> {
    if p.len() != q.len() {
        return Err(MetricsError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
    Ok((0.5 * kl_base2(p, &m) + 0.5 * kl_base2(q, &m)).clamp(0.0, 1.0))
}

/// Share of each class among `labels`, in taxonomy order.
pub fn label_distribution(labels: &[SentimentLabel]) -> [f64; 5] {
    let mut out = [0.0; 5];
    if labels.is_empty() {
        return out;
    }
    for l in labels {
        out[l.index()] += 1.0;
    }
    out.iter_mut().for_each(|x| *x /= labels.len() as f64);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson's chi-square test of independence on an `r × c` count table.
pub fn chi_square_independence<R: AsRef<[f64]>>(table: &[R]) -> Result<ChiSquare, MetricsError> {
    let rows = table.len();
    let cols = table.first().map(|r| r.as_ref().len()).unwrap_or(0);
    for (item, row) in table.iter().enumerate() {
        if row.as_ref().len() != cols {
            return Err(MetricsError::Ragged {
                item,
                expected: cols,
                got: row.as_ref().len(),
            });
        }
        if row.as_ref().iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(MetricsError::InvalidCounts);
        }
    }
    if rows < 2 || cols < 2 {
        return Err(MetricsError::ZeroDof { rows, cols });
    }
    let row_sums: Vec<f64> = table.iter().map(|r| r.as_ref().iter().sum()).collect();
    let col_sums: Vec<f64> = (0..cols).map(|j| table.iter().map(|r| r.as_ref()[j]).sum()).collect();
    if let Some(i) = row_sums.iter().position(|s| *s <= 0.0) {
        return Err(MetricsError::ZeroMarginal { axis: "row", index: i });
    }
    if let Some(j) = col_sums.iter().position(|s| *s <= 0.0) {
        return Err(MetricsError::ZeroMarginal { axis: "column", index: j });
    }
    let total: f64 = row_sums.iter().sum();
    let mut statistic = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, observed) in row.as_ref().iter().enumerate() {
            let expected = row_sums[i] * col_sums[j] / total;
            statistic += (observed - expected).powi(2) / expected;
        }
    }
    let dof = (rows - 1) * (cols - 1);
    Ok(ChiSquare {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof as f64),
    })
}

/// 5×5 counts with rows = labels of `a`, columns = labels of `b`.
pub fn contingency(a: &[SentimentLabel], b: &[SentimentLabel]) -> Result<Vec<Vec<f64>>, MetricsError> {
    check_pair(a, b, 0)?;
    let mut t = vec![vec![0.0; 5]; 5];
    for (x, y) in a.iter().zip(b) {
        t[x.index()][y.index()] += 1.0;
    }
    Ok(t)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_pair(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 {
        return Err(MetricsError::ZeroVariance("first sequence"));
    }
    if syy == 0.0 {
        return Err(MetricsError::ZeroVariance("second sequence"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson's r on ordinal encodings −2..2.
pub fn pearson_ordinal(a: &[SentimentLabel], b: &[SentimentLabel]) -> Result<f64, MetricsError> {
    let x: Vec<f64> = a.iter().map(|l| f64::from(l.ordinal())).collect();
    let y: Vec<f64> = b.iter().map(|l| f64::from(l.ordinal())).collect();
    pearson(&x, &y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusStats {
    pub n: usize,
    pub full_pct: f64,
    pub majority_pct: f64,
    pub majority_or_better_pct: f64,
    pub disagreement_pct: f64,
    /// Share of each final label among results that have one.
    pub class_distribution: BTreeMap<SentimentLabel, f64>,
}

pub fn consensus_stats(results: &[ConsensusResult]) -> Result<ConsensusStats, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::TooFew { min: 1, got: 0 });
    }
    let n = results.len() as f64;
    let count = |o| results.iter().filter(|r| r.outcome == o).count() as f64;
    let (full, majority, disagreement) = (
        count(ConsensusOutcome::Full),
        count(ConsensusOutcome::Majority),
        count(ConsensusOutcome::Disagreement),
    );
    let finals: Vec<SentimentLabel> = results.iter().filter_map(|r| r.final_label).collect();
    let dist = label_distribution(&finals);
    Ok(ConsensusStats {
        n: results.len(),
        full_pct: 100.0 * full / n,
        majority_pct: 100.0 * majority / n,
        majority_or_better_pct: 100.0 * (full + majority) / n,
        disagreement_pct: 100.0 * disagreement / n,
        class_distribution: SentimentLabel::ALL.into_iter().map(|l| (l, 100.0 * dist[l.index()])).collect(),
    })
}

/// Percentage of pairs whose two labels are equal.
pub fn label_consistency(pairs: &[(SentimentLabel, SentimentLabel)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::TooFew { min: 1, got: 0 });
    }
    Ok(100.0 * pairs.iter().filter(|(a, b)| a == b).count() as f64 / pairs.len() as f64)
}

/// Percentage of positions where two annotators agree.
pub fn agreement_rate<T: PartialEq>(a: &[T], b: &[T]) -> Result<f64, MetricsError> {
    check_pair(a, b, 1)?;
    Ok(100.0 * a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub model_a: String,
    pub model_b: String,
    pub kappa: Kappa,
    pub js_divergence: f64,
    /// Absent when either side has zero variance.
    pub pearson: Option<f64>,
    /// Over the contingency table with empty rows and columns removed;
    /// absent when fewer than two remain on either axis.
    pub chi_square: Option<ChiSquare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub jsd_log_base: u32,
    pub pairs: Vec<PairAgreement>,
    pub consensus: Option<ConsensusStats>,
}

/// Pairwise statistics over per-model label sequences aligned by item.
pub fn agreement_report(
    labels: &BTreeMap<String, Vec<SentimentLabel>>,
    consensus: &[ConsensusResult],
) -> Result<AgreementReport, MetricsError> {
    let models: Vec<&String> = labels.keys().collect();
    let mut pairs = Vec::new();
    for (i, a) in models.iter().enumerate() {
        for b in &models[i + 1..] {
            let (la, lb) = (&labels[*a], &labels[*b]);
            let kappa = cohen_kappa(la, lb)?;
            let js = js_divergence(&label_distribution(la), &label_distribution(lb))?;
            let table = contingency(la, lb)?;
            let keep_rows: Vec<usize> = (0..5).filter(|&r| table[r].iter().sum::<f64>() > 0.0).collect();
            let keep_cols: BTreeSet<usize> = (0..5).filter(|&c| table.iter().map(|r| r[c]).sum::<f64>() > 0.0).collect();
            let reduced: Vec<Vec<f64>> = keep_rows
                .iter()
                .map(|&r| keep_cols.iter().map(|&c| table[r][c]).collect())
                .collect();
            pairs.push(PairAgreement {
                model_a: a.to_string(),
                model_b: b.to_string(),
                kappa,
                js_divergence: js,
                pearson: pearson_ordinal(la, lb).ok(),
                chi_square: chi_square_independence(&reduced).ok(),
            });
        }
    }
    Ok(AgreementReport {
        jsd_log_base: 2,
        pairs,
        consensus: if consensus.is_empty() {
            None
        } else {
            Some(consensus_stats(consensus)?)
        },
    })
}
