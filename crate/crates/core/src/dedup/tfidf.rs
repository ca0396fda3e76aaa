use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DedupError;
use crate::normalize::content_tokens;

/// Inverse document frequencies for one fitted corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    pub corpus_id: String,
    pub n_docs: usize,
    pub idf: HashMap<String, f64>,
}

impl IdfTable {
    /// `ln((1 + N) / (1 + df)) + 1`; unseen terms use `df = 0`.
    pub fn idf(&self, term: &str) -> f64 {
        self.idf
            .get(term)
            .copied()
            .unwrap_or_else(|| smoothed_idf(self.n_docs, 0))
    }
}

pub fn smoothed_idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfVector {
    pub corpus_id: String,
    pub terms: BTreeMap<String, f64>,
}

impl TfidfVector {
    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.terms.values().map(|w| w * w).sum::<f64>().sqrt()
    }
}

pub fn tfidf_fit<S: AsRef<str>>(corpus: &[S]) -> Result<IdfTable, DedupError> {
    if corpus.is_empty() {
        return Err(DedupError::EmptyCorpus);
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    let mut hasher = Sha256::new();
    for text in corpus {
        let text = text.as_ref();
        hasher.update((text.len() as u64).to_le_bytes());
        hasher.update(text.as_bytes());
        let unique: HashSet<&str> = content_tokens(text).into_iter().collect();
        for term in unique {
            *df.entry(term.to_string()).or_default() += 1;
        }
    }
    let n = corpus.len();
    let idf = df.into_iter().map(|(t, d)| (t, smoothed_idf(n, d))).collect();
    Ok(IdfTable {
        corpus_id: hex::encode(&hasher.finalize()[..8]),
        n_docs: n,
        idf,
    })
}

/// Raw term counts times idf, scaled to unit length.
pub fn tfidf_vectorize(text: &str, idf: &IdfTable) -> TfidfVector {
    let mut tf: BTreeMap<String, f64> = BTreeMap::new();
    for token in content_tokens(text) {
        *tf.entry(token.to_string()).or_default() += 1.0;
    }
    let mut terms: BTreeMap<String, f64> = tf.into_iter().map(|(t, c)| {
        let w = c * idf.idf(&t);
        (t, w)
    }).collect();
    let norm = terms.values().map(|w| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        terms.values_mut().for_each(|w| *w /= norm);
    }
    TfidfVector {
        corpus_id: idf.corpus_id.clone(),
        terms,
    }
}

/// Cosine of two unit vectors from the same fit, clamped to `[0, 1]`.
pub fn cosine(a: &TfidfVector, b: &TfidfVector) -> Result<f64, DedupError> {
    if a.corpus_id != b.corpus_id {
        return Err(DedupError::CorpusMismatch {
            left: a.corpus_id.clone(),
            right: b.corpus_id.clone(),
        });
    }
    let (small, large) = if a.terms.len() <= b.terms.len() { (a, b) } else { (b, a) };
    let dot: f64 = small
        .terms
        .iter()
        .filter_map(|(t, w)| large.terms.get(t).map(|v| w * v))
        .sum();
    Ok(dot.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_disjoint() {
        let idf = tfidf_fit(&["a b c", "d e"]).unwrap();
        let a = tfidf_vectorize("a b c", &idf);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        let d = tfidf_vectorize("d e", &idf);
        assert_eq!(cosine(&a, &d).unwrap(), 0.0);
        assert!(tfidf_vectorize("", &idf).is_empty());
    }

    #[test]
    fn fit_rejects_empty_corpus() {
        let empty: [&str; 0] = [];
        assert!(matches!(tfidf_fit(&empty), Err(DedupError::EmptyCorpus)));
    }

    #[test]
    fn mismatched_fits_are_rejected() {
        let f1 = tfidf_fit(&["a b"]).unwrap();
        let f2 = tfidf_fit(&["a c"]).unwrap();
        let r = cosine(&tfidf_vectorize("a", &f1), &tfidf_vectorize("a", &f2));
        assert!(matches!(r, Err(DedupError::CorpusMismatch { .. })));
    }

    #[test]
    fn universal_terms_keep_positive_weight() {
        let idf = tfidf_fit(&["a b", "a c"]).unwrap();
        assert!((idf.idf("a") - 1.0).abs() < 1e-12);
        assert!(idf.idf("b") > idf.idf("a"));
    }
}
