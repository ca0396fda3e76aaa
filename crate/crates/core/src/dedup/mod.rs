//! Three-level deduplication: exact digests, TF-IDF near duplicates and
//! embedding-based semantic duplicates.
//!
//! Each level clusters the survivors of the previous one. Two documents are
//! linked when their similarity reaches the level's threshold; clusters are
//! the connected components of those links, so the partition does not
//! depend on input order. The earliest member by `(published_at, id)` is
//! kept and every other member points at it.

mod embed;
mod tfidf;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use embed::{dot, l2_normalize, EmbedError, EmbeddingProvider, HashingEmbedder, HttpEmbedder};
pub use tfidf::{cosine, smoothed_idf, tfidf_fit, tfidf_vectorize, IdfTable, TfidfVector};

use crate::Document;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DedupError {
    #[error("cannot fit TF-IDF on an empty corpus")]
    EmptyCorpus,
    #[error("TF-IDF vectors come from different fits ({left} vs {right})")]
    CorpusMismatch { left: String, right: String },
    #[error("{name} must be in (0, 1], got {value}")]
    InvalidThreshold { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    pub near_threshold: f64,
    pub semantic_threshold: f64,
    /// Near-duplicate candidates must satisfy
    /// `|wc_a - wc_b| <= length_tolerance * max(wc_a, wc_b)`.
    pub length_tolerance: f64,
    pub semantic: bool,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            near_threshold: 0.90,
            semantic_threshold: 0.95,
            length_tolerance: 0.30,
            semantic: true,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<(), DedupError> {
        for (name, value) in [
            ("near_threshold", self.near_threshold),
            ("semantic_threshold", self.semantic_threshold),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(DedupError::InvalidThreshold { name, value });
            }
        }
        if !(0.0..=1.0).contains(&self.length_tolerance) {
            return Err(DedupError::InvalidThreshold {
                name: "length_tolerance",
                value: self.length_tolerance,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    DropExact,
    DropNear,
    DropSemantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupDecision {
    pub document_id: String,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
    /// Strongest link from this document into its cluster.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    /// One decision per input document, in input order.
    pub decisions: Vec<DedupDecision>,
    /// Set when the embedding provider failed and the semantic pass was
    /// skipped.
    pub semantic_degraded: bool,
    pub semantic_provider: Option<String>,
}

impl DedupReport {
    pub fn count(&self, verdict: Verdict) -> usize {
        self.decisions.iter().filter(|d| d.verdict == verdict).count()
    }
}

/// SHA-256 of the text, hex encoded.
pub fn exact_key(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Keeps the smaller index as root, so roots are the earliest members
    /// when indices follow canonical order.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Clusters items `0..n` (indices in canonical order) over weighted edges.
/// Returns `(representative, best incident edge)` for every non-representative.
fn cluster(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Option<(usize, f64)>> {
    let mut uf = UnionFind::new(n);
    let mut best = vec![0.0f64; n];
    for &(a, b, w) in edges {
        uf.union(a, b);
        best[a] = best[a].max(w);
        best[b] = best[b].max(w);
    }
    (0..n)
        .map(|i| {
            let root = uf.find(i);
            (root != i).then_some((root, best[i]))
        })
        .collect()
}

fn within_tolerance(a: usize, b: usize, tolerance: f64) -> bool {
    a.abs_diff(b) as f64 <= tolerance * a.max(b) as f64
}

fn near_edges(texts: &[&str], word_counts: &[usize], cfg: &DedupConfig) -> Vec<(usize, usize, f64)> {
    let Ok(idf) = tfidf_fit(texts) else {
        return Vec::new();
    };
    let vectors: Vec<TfidfVector> = texts.par_iter().map(|t| tfidf_vectorize(t, &idf)).collect();
    let mut by_length: Vec<usize> = (0..texts.len()).collect();
    by_length.sort_by_key(|&i| (word_counts[i], i));
    let mut edges: Vec<(usize, usize, f64)> = (0..by_length.len())
        .into_par_iter()
        .flat_map_iter(|pos| {
            let i = by_length[pos];
            let mut found = Vec::new();
            for &j in &by_length[pos + 1..] {
                if !within_tolerance(word_counts[i], word_counts[j], cfg.length_tolerance) {
                    break;
                }
                let sim = cosine(&vectors[i], &vectors[j]).expect("vectors share one fit");
                if sim >= cfg.near_threshold {
                    found.push((i.min(j), i.max(j), sim));
                }
            }
            found
        })
        .collect();
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    edges
}

fn semantic_edges(vectors: &[Vec<f64>], threshold: f64) -> Vec<(usize, usize, f64)> {
    let mut edges: Vec<(usize, usize, f64)> = (0..vectors.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            (i + 1..vectors.len()).filter_map(move |j| {
                let sim = dot(&vectors[i], &vectors[j]).clamp(0.0, 1.0);
                (sim >= threshold).then_some((i, j, sim))
            })
        })
        .collect();
    edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    edges
}

/// Runs all three levels over normalized documents.
pub fn dedup_pass(
    docs: &[Document],
    cfg: &DedupConfig,
    embedder: Option<&dyn EmbeddingProvider>,
) -> Result<DedupReport, DedupError> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by(|&a, &b| docs[a].canonical_key().cmp(&docs[b].canonical_key()));

    let mut decisions: Vec<Option<DedupDecision>> = vec![None; docs.len()];
    let drop = |decisions: &mut Vec<Option<DedupDecision>>, i: usize, verdict, of: usize, sim: f64| {
        decisions[i] = Some(DedupDecision {
            document_id: docs[i].id.clone(),
            verdict,
            duplicate_of: Some(docs[of].id.clone()),
            similarity: Some(sim),
        });
    };

    let mut first_by_key: HashMap<String, usize> = HashMap::new();
    let mut survivors = Vec::new();
    for &i in &order {
        match first_by_key.entry(exact_key(&docs[i].normalized_text)) {
            std::collections::hash_map::Entry::Occupied(e) => drop(&mut decisions, i, Verdict::DropExact, *e.get(), 1.0),
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(i);
                survivors.push(i);
            }
        }
    }

    let texts: Vec<&str> = survivors.iter().map(|&i| docs[i].normalized_text.as_str()).collect();
    let word_counts: Vec<usize> = survivors.iter().map(|&i| docs[i].word_count).collect();
    let edges = near_edges(&texts, &word_counts, cfg);
    let mut next = Vec::new();
    for (local, assignment) in cluster(survivors.len(), &edges).into_iter().enumerate() {
        match assignment {
            Some((rep, sim)) => drop(&mut decisions, survivors[local], Verdict::DropNear, survivors[rep], sim),
            None => next.push(survivors[local]),
        }
    }
    let survivors = next;

    let mut semantic_degraded = false;
    let mut semantic_provider = None;
    if let (true, Some(embedder)) = (cfg.semantic, embedder) {
        semantic_provider = Some(embedder.name().to_string());
        let texts: Vec<String> = survivors.iter().map(|&i| docs[i].normalized_text.clone()).collect();
        match embedder.embed(&texts) {
            Ok(vectors) if vectors.len() == texts.len() => {
                let edges = semantic_edges(&vectors, cfg.semantic_threshold);
                for (local, assignment) in cluster(survivors.len(), &edges).into_iter().enumerate() {
                    if let Some((rep, sim)) = assignment {
                        drop(&mut decisions, survivors[local], Verdict::DropSemantic, survivors[rep], sim);
                    }
                }
            }
            Ok(vectors) => {
                log::warn!(
                    "semantic dedup skipped: provider {} returned {} vectors for {} texts",
                    embedder.name(),
                    vectors.len(),
                    texts.len()
                );
                semantic_degraded = true;
            }
            Err(e) => {
                log::warn!("semantic dedup skipped: {e}");
                semantic_degraded = true;
            }
        }
    }

    let decisions = decisions
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            d.unwrap_or_else(|| DedupDecision {
                document_id: docs[i].id.clone(),
                verdict: Verdict::Keep,
                duplicate_of: None,
                similarity: None,
            })
        })
        .collect();
    Ok(DedupReport {
        decisions,
        semantic_degraded,
        semantic_provider,
    })
}
