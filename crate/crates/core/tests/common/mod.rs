//! Independent reference implementations and fixtures shared by the
//! integration tests and the acceptance runner. Nothing here calls into the
//! code under test except for type definitions.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use finsent::corpus::ConsensusOutcome;
use finsent::SentimentLabel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---------------------------------------------------------------- agreement

pub fn kappa_oracle<T: Ord + Clone>(a: &[T], b: &[T]) -> f64 {
    let n = a.len() as f64;
    let mut agree = 0.0;
    for i in 0..a.len() {
        if a[i] == b[i] {
            agree += 1.0;
        }
    }
    let po = agree / n;
    let cats: BTreeSet<T> = a.iter().chain(b).cloned().collect();
    let mut pe = 0.0;
    for c in &cats {
        let ca = a.iter().filter(|x| *x == c).count() as f64;
        let cb = b.iter().filter(|x| *x == c).count() as f64;
        pe += (ca / n) * (cb / n);
    }
    if pe == 1.0 {
        return 1.0;
    }
    (po - pe) / (1.0 - pe)
}

/// `votes[i][r]` is rater `r`'s category for item `i`.
pub fn fleiss_oracle<T: Ord + Clone>(votes: &[Vec<T>]) -> f64 {
    let items = votes.len() as f64;
    let raters = votes[0].len() as f64;
    let cats: BTreeSet<T> = votes.iter().flatten().cloned().collect();
    let mut p_bar = 0.0;
    let mut totals: BTreeMap<T, f64> = BTreeMap::new();
    for row in votes {
        let mut sq = 0.0;
        for c in &cats {
            let k = row.iter().filter(|x| *x == c).count() as f64;
            sq += k * k;
            *totals.entry(c.clone()).or_default() += k;
        }
        p_bar += (sq - raters) / (raters * (raters - 1.0));
    }
    p_bar /= items;
    let pe: f64 = totals.values().map(|t| (t / (items * raters)).powi(2)).sum();
    if pe == 1.0 {
        return 1.0;
    }
    (p_bar - pe) / (1.0 - pe)
}

pub fn jsd_oracle(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
    let kl = |x: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..x.len() {
            if x[i] > 0.0 {
                s += x[i] * (x[i] / m[i]).log2();
            }
        }
        s
    };
    0.5 * kl(p) + 0.5 * kl(q)
}

pub struct ChiOracle {
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
}

pub fn chi_square_oracle(table: &[Vec<f64>]) -> ChiOracle {
    let rows = table.len();
    let cols = table[0].len();
    let total: f64 = table.iter().flatten().sum();
    let mut statistic = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let row_sum: f64 = table[r].iter().sum();
            let col_sum: f64 = (0..rows).map(|i| table[i][c]).sum();
            let expected = row_sum * col_sum / total;
            statistic += (table[r][c] - expected).powi(2) / expected;
        }
    }
    let dof = ((rows - 1) * (cols - 1)) as f64;
    let p_value = ChiSquared::new(dof).unwrap().sf(statistic);
    ChiOracle { statistic, dof, p_value }
}

pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx).powi(2);
        syy += (y[i] - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn ordinal(l: SentimentLabel) -> f64 {
    match l {
        SentimentLabel::StronglyNegative => -2.0,
        SentimentLabel::Negative => -1.0,
        SentimentLabel::Neutral => 0.0,
        SentimentLabel::Positive => 1.0,
        SentimentLabel::StronglyPositive => 2.0,
    }
}

pub struct TOracle {
    pub t: f64,
    pub p_value: f64,
}

pub fn t_test_oracle(x: &[f64], y: &[f64]) -> TOracle {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = mean / (var.sqrt() / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
    TOracle {
        t,
        p_value: 2.0 * (1.0 - dist.cdf(t.abs())),
    }
}

// -------------------------------------------------------------------- rouge

fn tokens(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Precision, recall and F1 of unigram overlap, matching each reference
/// token at most once.
pub fn rouge1_oracle(reference: &str, candidate: &str) -> (f64, f64, f64) {
    let mut pool = tokens(reference);
    let cand = tokens(candidate);
    let mut overlap = 0;
    for t in &cand {
        if let Some(pos) = pool.iter().position(|r| r == t) {
            pool.remove(pos);
            overlap += 1;
        }
    }
    prf(overlap, cand.len(), tokens(reference).len())
}

fn prf(overlap: usize, cand: usize, reference: usize) -> (f64, f64, f64) {
    let p = if cand == 0 { 0.0 } else { overlap as f64 / cand as f64 };
    let r = if reference == 0 { 0.0 } else { overlap as f64 / reference as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

fn is_subsequence<T: PartialEq>(needle: &[T], hay: &[T]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// Longest common subsequence by enumerating every subsequence of the
/// shorter side. Exponential; keep inputs small.
pub fn lcs_oracle<T: PartialEq + Clone>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "oracle input too long");
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let sub: Vec<T> = (0..short.len()).filter(|i| mask & (1 << i) != 0).map(|i| short[i].clone()).collect();
        if sub.len() > best && is_subsequence(&sub, long) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l_oracle(reference: &str, candidate: &str) -> (f64, f64, f64) {
    let r = tokens(reference);
    let c = tokens(candidate);
    prf(lcs_oracle(&r, &c), c.len(), r.len())
}

// ---------------------------------------------------------- string matching

pub fn levenshtein_oracle(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(v) = memo.get(&(a.len(), b.len())) {
            return *v;
        }
        let sub = go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
        let del = go(&a[1..], b, memo) + 1;
        let ins = go(a, &b[1..], memo) + 1;
        let v = sub.min(del).min(ins);
        memo.insert((a.len(), b.len()), v);
        v
    }
    go(a, b, &mut HashMap::new())
}

/// Heaviest common token subsequence (weight = char count) by enumeration.
fn weighted_lcs_oracle(a: &[&str], b: &[&str]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let sub: Vec<&str> = (0..short.len()).filter(|i| mask & (1 << i) != 0).map(|i| short[i]).collect();
        let w: usize = sub.iter().map(|t| t.chars().count()).sum();
        if w > best && is_subsequence(&sub, long) {
            best = w;
        }
    }
    best
}

/// `max(1 - lev / max_len, 2 w(LCS) / (w(a) + w(b)))`.
pub fn fuzzy_oracle(a: &str, b: &str) -> f64 {
    let ca: Vec<char> = a.chars().collect();
    let cb: Vec<char> = b.chars().collect();
    let max_len = ca.len().max(cb.len());
    let edit = if max_len == 0 {
        1.0
    } else {
        1.0 - levenshtein_oracle(&ca, &cb) as f64 / max_len as f64
    };
    let ta = tokens(a);
    let tb = tokens(b);
    let total: usize = ta.iter().chain(&tb).map(|t| t.chars().count()).sum();
    let token = if total == 0 {
        if ta.is_empty() && tb.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        2.0 * weighted_lcs_oracle(&ta, &tb) as f64 / total as f64
    };
    edit.max(token)
}

// -------------------------------------------------------------------- tfidf

/// Smoothed-idf TF-IDF cosine of documents `i` and `j` over `corpus`, each
/// document given as its token list.
pub fn tfidf_cosine_oracle(corpus: &[Vec<String>], i: usize, j: usize) -> f64 {
    let n = corpus.len() as f64;
    let idf = |term: &str| {
        let df = corpus.iter().filter(|d| d.iter().any(|t| t == term)).count() as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    };
    let weights = |doc: &[String]| -> BTreeMap<String, f64> {
        let mut w = BTreeMap::new();
        for t in doc {
            *w.entry(t.clone()).or_insert(0.0) += 1.0;
        }
        for (t, v) in w.iter_mut() {
            *v *= idf(t);
        }
        w
    };
    let a = weights(&corpus[i]);
    let b = weights(&corpus[j]);
    let dot: f64 = a.iter().map(|(t, v)| v * b.get(t).copied().unwrap_or(0.0)).sum();
    let na = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

// ---------------------------------------------------------------- consensus

/// Outcome of three votes under "at least two of three agree".
pub fn modal_oracle(votes: [SentimentLabel; 3]) -> (ConsensusOutcome, Option<SentimentLabel>) {
    let [a, b, c] = votes;
    if a == b && b == c {
        (ConsensusOutcome::Full, Some(a))
    } else if a == b || a == c {
        (ConsensusOutcome::Majority, Some(a))
    } else if b == c {
        (ConsensusOutcome::Majority, Some(b))
    } else {
        (ConsensusOutcome::Disagreement, None)
    }
}

// ----------------------------------------------------------------- fixtures

pub fn labels(ordinals: &[i8]) -> Vec<SentimentLabel> {
    ordinals.iter().map(|&o| SentimentLabel::from_ordinal(o).unwrap()).collect()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<SentimentLabel> {
    (0..n).map(|_| SentimentLabel::ALL[rng.random_range(0..5)]).collect()
}

/// Label pairs where `b` copies `a` with probability `agree`.
pub fn correlated_labels(rng: &mut ChaCha8Rng, n: usize, agree: f64) -> (Vec<SentimentLabel>, Vec<SentimentLabel>) {
    let a = random_labels(rng, n);
    let b = a
        .iter()
        .map(|&l| if rng.random_bool(agree) { l } else { SentimentLabel::ALL[rng.random_range(0..5)] })
        .collect();
    (a, b)
}

pub fn kappa_fixtures() -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut out = vec![
        (vec![1, 1, 0, 0, 1], vec![1, 0, 0, 0, 1]),
        (vec![1, 0, 1, 0], vec![0, 1, 0, 1]),
        (vec![0, 1, 2, 3, 4, 0, 1, 2], vec![0, 1, 2, 3, 4, 0, 1, 2]),
        (vec![0, 0, 1, 1, 2, 2, 3, 4], vec![0, 1, 1, 2, 2, 3, 3, 4]),
    ];
    let mut r = rng(11);
    for n in [20, 60, 200] {
        let (a, b) = correlated_labels(&mut r, n, 0.7);
        out.push((a.iter().map(|l| l.index() as u8).collect(), b.iter().map(|l| l.index() as u8).collect()));
    }
    out
}

pub fn fleiss_fixtures() -> Vec<Vec<Vec<u8>>> {
    let mut out = vec![
        vec![vec![0, 0, 1], vec![1, 1, 1]],
        vec![vec![0, 0, 0], vec![1, 1, 1], vec![2, 2, 2]],
        vec![vec![0, 1, 2], vec![2, 1, 0], vec![0, 0, 1], vec![4, 4, 3]],
        vec![vec![0, 0, 1, 1], vec![2, 2, 2, 3], vec![4, 4, 4, 4], vec![1, 2, 3, 4]],
    ];
    let mut r = rng(12);
    for items in [15, 40] {
        out.push(
            (0..items)
                .map(|_| {
                    let base = r.random_range(0..5u8);
                    (0..3).map(|_| if r.random_bool(0.75) { base } else { r.random_range(0..5u8) }).collect()
                })
                .collect(),
        );
    }
    out
}

fn random_distribution(r: &mut ChaCha8Rng, zeros: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..5).map(|_| r.random_range(0.05..1.0)).collect();
    for z in v.iter_mut().take(zeros) {
        *z = 0.0;
    }
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

pub fn jsd_fixtures() -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = vec![
        (vec![0.5, 0.5, 0.0, 0.0, 0.0], vec![0.25, 0.75, 0.0, 0.0, 0.0]),
        (vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0, 0.0]),
        (vec![0.2; 5], vec![0.2; 5]),
        (vec![0.1, 0.2, 0.3, 0.2, 0.2], vec![0.3, 0.1, 0.1, 0.4, 0.1]),
    ];
    let mut r = rng(13);
    for zeros in [0, 1, 2] {
        out.push((random_distribution(&mut r, zeros), random_distribution(&mut r, 0)));
    }
    out
}

pub fn chi_fixtures() -> Vec<Vec<Vec<f64>>> {
    let mut out = vec![
        vec![vec![10.0, 0.0], vec![0.0, 10.0]],
        vec![vec![10.0, 20.0], vec![20.0, 40.0]],
        vec![vec![12.0, 5.0, 7.0], vec![3.0, 9.0, 14.0]],
        vec![vec![30.0, 10.0], vec![15.0, 25.0], vec![5.0, 40.0]],
    ];
    let mut r = rng(14);
    for (rows, cols) in [(3, 3), (5, 5), (4, 2)] {
        out.push((0..rows).map(|_| (0..cols).map(|_| r.random_range(1..60) as f64).collect()).collect());
    }
    out
}

pub fn pearson_fixtures() -> Vec<(Vec<SentimentLabel>, Vec<SentimentLabel>)> {
    let mut out = vec![
        (labels(&[-2, -1, 0, 1, 2]), labels(&[-2, -1, 0, 1, 2])),
        (labels(&[-2, -1, 0, 1, 2]), labels(&[2, 1, 0, -1, -2])),
        (labels(&[1, 1, 0, -1, 2, 0]), labels(&[1, 0, 0, -1, 1, -1])),
    ];
    let mut r = rng(15);
    for n in [10, 50, 300] {
        out.push(correlated_labels(&mut r, n, 0.6));
    }
    out
}

pub fn rouge_fixtures() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = [
        ("a b c d", "a b x"),
        ("a b c d", "a b c d"),
        ("a a b", "a a a b b"),
        ("ارتفع السهم اليوم بقوة", "السهم ارتفع بقوة"),
        ("x y z", "p q"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    let vocab = ["a", "b", "c", "d", "e", "f"];
    let mut r = rng(16);
    for _ in 0..5 {
        let mut words = |n: usize| (0..n).map(|_| vocab[r.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ");
        let reference = words(12);
        let candidate = words(8);
        out.push((reference, candidate));
    }
    out
}

pub fn t_test_fixtures() -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = vec![
        (vec![2.0, 4.0, 6.0, 8.0, 10.0], vec![1.0, 2.0, 3.0, 4.0, 5.0]),
        (vec![0.81, 0.77, 0.69, 0.74, 0.80], vec![0.70, 0.71, 0.66, 0.69, 0.72]),
        (vec![1.0, 2.0], vec![0.0, 0.5]),
    ];
    let mut r = rng(17);
    for n in [8, 30, 120] {
        let x: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v - 0.05 + r.random_range(-0.1..0.1)).collect();
        out.push((x, y));
    }
    out
}

// ------------------------------------------------------------ entity probes

pub const ARABIC_LETTERS: &str = "ابتثجحخدذرزسشصضطظعغفقكلمنهوي";
pub const LATIN_LETTERS: &str = "abcdefghijklmnopqrstuvwxyz";

/// Tags the whole text as one organization.
pub struct WholeSpan;

impl finsent::entities::NerProvider for WholeSpan {
    fn organizations(&self, text: &str) -> Result<Vec<finsent::entities::NerSpan>, finsent::entities::NerError> {
        Ok(vec![finsent::entities::NerSpan { start: 0, end: text.len() }])
    }
}

/// Applies `edits` random single-letter edits using the alias's own script.
pub fn mutate(form: &str, edits: usize, r: &mut impl Rng) -> String {
    use rand::seq::IndexedRandom;
    let alphabet: Vec<char> = if form.chars().any(|c| c.is_ascii_alphabetic()) {
        LATIN_LETTERS.chars().collect()
    } else {
        ARABIC_LETTERS.chars().collect()
    };
    let mut chars: Vec<char> = form.chars().collect();
    for _ in 0..edits {
        let letters: Vec<usize> = (0..chars.len()).filter(|&i| chars[i] != ' ').collect();
        let letter = *alphabet.choose(r).unwrap();
        match r.random_range(0..3) {
            0 if !letters.is_empty() => {
                let i = *letters.choose(r).unwrap();
                chars[i] = letter;
            }
            1 if letters.len() > 1 => {
                let i = *letters.choose(r).unwrap();
                chars.remove(i);
            }
            _ => {
                let i = r.random_range(0..=chars.len());
                chars.insert(i, letter);
            }
        }
    }
    chars.into_iter().collect()
}
