use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::dedup::{cosine, tfidf_fit, tfidf_vectorize};
use crate::normalize::{content_tokens, normalize_text, word_count, NormalizationConfig};
use crate::Source;

const STOPWORDS: &str = include_str!("../../resources/metrics/stopwords_ar.txt");

fn stopwords() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        let cfg = NormalizationConfig::default();
        STOPWORDS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| normalize_text(l, &cfg))
            .collect()
    })
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

fn require_source(source: &str) -> Result<(), MetricsError> {
    if content_tokens(source).is_empty() {
        Err(MetricsError::EmptySource)
    } else {
        Ok(())
    }
}

/// Summary words over source words.
pub fn compression_ratio(source: &str, summary: &str) -> Result<f64, MetricsError> {
    require_source(source)?;
    Ok(word_count(summary) as f64 / word_count(source) as f64)
}

/// TF-IDF cosine with the idf fitted on the two texts alone.
pub fn cosine_sim(source: &str, summary: &str) -> Result<f64, MetricsError> {
    require_source(source)?;
    if content_tokens(summary).is_empty() {
        return Ok(0.0);
    }
    let idf = tfidf_fit(&[source, summary]).map_err(|_| MetricsError::EmptySource)?;
    let a = tfidf_vectorize(source, &idf);
    let b = tfidf_vectorize(summary, &idf);
    Ok(cosine(&a, &b).expect("vectors share a fit"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rouge {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Rouge {
    fn from_overlap(overlap: usize, cand_len: usize, ref_len: usize) -> Self {
        let precision = if cand_len == 0 { 0.0 } else { overlap as f64 / cand_len as f64 };
        let recall = if ref_len == 0 { 0.0 } else { overlap as f64 / ref_len as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut m = HashMap::new();
    if n > 0 {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// ROUGE-N with clipped n-gram counts.
pub fn rouge_n(reference: &str, candidate: &str, n: usize) -> Rouge {
    let r = content_tokens(reference);
    let c = content_tokens(candidate);
    let rc = ngram_counts(&r, n);
    let cc = ngram_counts(&c, n);
    let overlap = cc.iter().map(|(g, k)| (*k).min(rc.get(g).copied().unwrap_or(0))).sum();
    Rouge::from_overlap(overlap, cc.values().sum(), rc.values().sum())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(reference: &str, candidate: &str) -> Rouge {
    let r = content_tokens(reference);
    let c = content_tokens(candidate);
    Rouge::from_overlap(lcs_len(&r, &c), c.len(), r.len())
}

/// Share of the summary's non-stopword tokens that never occur in the source.
/// An empty summary scores 0.
pub fn hallucination_ratio(source: &str, summary: &str) -> Result<f64, MetricsError> {
    require_source(source)?;
    let known: HashSet<&str> = content_tokens(source).into_iter().collect();
    let content: Vec<&str> = content_tokens(summary).into_iter().filter(|t| !is_stopword(t)).collect();
    if content.is_empty() {
        return Ok(0.0);
    }
    Ok(content.iter().filter(|t| !known.contains(*t)).count() as f64 / content.len() as f64)
}

/// Share of companies linked in the summary that are not linked in the
/// source; `None` when the summary links none.
pub fn entity_hallucination_ratio<S: AsRef<str>>(source_ids: &[S], summary_ids: &[S]) -> Option<f64> {
    let known: BTreeSet<&str> = source_ids.iter().map(AsRef::as_ref).collect();
    let found: BTreeSet<&str> = summary_ids.iter().map(AsRef::as_ref).collect();
    if found.is_empty() {
        return None;
    }
    Some(found.iter().filter(|id| !known.contains(*id)).count() as f64 / found.len() as f64)
}

pub fn hybrid_score(rouge_l_f1: f64, cosine: f64) -> f64 {
    (rouge_l_f1 + cosine) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryScores {
    pub document_id: String,
    pub source: Source,
    pub compression_ratio: f64,
    pub cosine_similarity: f64,
    pub rouge1: f64,
    pub rouge_l: f64,
    pub hallucination_ratio: f64,
    pub hybrid_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_hallucination_ratio: Option<f64>,
    pub empty_summary: bool,
    /// Summary longer than its source.
    pub expanded: bool,
}

/// Scores one summary against its source. ROUGE uses the source as the
/// reference.
pub fn score_summary(
    document_id: &str,
    source_kind: Source,
    source: &str,
    summary: &str,
    entity_ids: Option<(&[String], &[String])>,
) -> Result<SummaryScores, MetricsError> {
    let compression = compression_ratio(source, summary)?;
    let cos = cosine_sim(source, summary)?;
    let rl = rouge_l(source, summary).f1;
    Ok(SummaryScores {
        document_id: document_id.to_string(),
        source: source_kind,
        compression_ratio: compression,
        cosine_similarity: cos,
        rouge1: rouge_n(source, summary, 1).f1,
        rouge_l: rl,
        hallucination_ratio: hallucination_ratio(source, summary)?,
        hybrid_score: hybrid_score(rl, cos),
        entity_hallucination_ratio: entity_ids.and_then(|(s, m)| entity_hallucination_ratio(s, m)),
        empty_summary: content_tokens(summary).is_empty(),
        expanded: compression > 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SummaryMeans {
    pub n: usize,
    pub compression_ratio: f64,
    pub cosine_similarity: f64,
    pub rouge1: f64,
    pub rouge_l: f64,
    pub hallucination_ratio: f64,
    pub hybrid_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_hallucination_ratio: Option<f64>,
}

impl SummaryMeans {
    pub fn of<'a>(scores: impl IntoIterator<Item = &'a SummaryScores>) -> Self {
        let mut m = SummaryMeans::default();
        let mut entity = (0.0, 0usize);
        for s in scores {
            m.n += 1;
            m.compression_ratio += s.compression_ratio;
            m.cosine_similarity += s.cosine_similarity;
            m.rouge1 += s.rouge1;
            m.rouge_l += s.rouge_l;
            m.hallucination_ratio += s.hallucination_ratio;
            m.hybrid_score += s.hybrid_score;
            if let Some(e) = s.entity_hallucination_ratio {
                entity.0 += e;
                entity.1 += 1;
            }
        }
        if m.n > 0 {
            let n = m.n as f64;
            m.compression_ratio /= n;
            m.cosine_similarity /= n;
            m.rouge1 /= n;
            m.rouge_l /= n;
            m.hallucination_ratio /= n;
            m.hybrid_score /= n;
        }
        if entity.1 > 0 {
            m.entity_hallucination_ratio = Some(entity.0 / entity.1 as f64);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummQualityReport {
    pub overall: SummaryMeans,
    pub by_source: BTreeMap<Source, SummaryMeans>,
    pub expanded_documents: Vec<String>,
    pub series: Vec<SummaryScores>,
}

impl SummQualityReport {
    pub fn from_scores(mut series: Vec<SummaryScores>) -> Self {
        series.sort_by(|a, b| a.document_id.cmp(&b.document_id));
        let mut by_source = BTreeMap::new();
        for kind in [Source::News, Source::Social] {
            let m = SummaryMeans::of(series.iter().filter(|s| s.source == kind));
            if m.n > 0 {
                by_source.insert(kind, m);
            }
        }
        Self {
            overall: SummaryMeans::of(&series),
            by_source,
            expanded_documents: series.iter().filter(|s| s.expanded).map(|s| s.document_id.clone()).collect(),
            series,
        }
    }

    /// Per-document series as CSV.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("document_id,source,compression_ratio,cosine_similarity,rouge1,rouge_l,hallucination_ratio,hybrid_score\n");
        for s in &self.series {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                s.document_id,
                s.source.as_str(),
                s.compression_ratio,
                s.cosine_similarity,
                s.rouge1,
                s.rouge_l,
                s.hallucination_ratio,
                s.hybrid_score
            ));
        }
        out
    }
}
