//! Synthetic mini-corpus with known labels and planted duplicates.
//!
//! Lengths are log-normal: news around 268 words (sd ≈ 145), social around
//! 24. The first content sentence of every document carries one keyword
//! phrase of the target class, so the rule-based mock labels it exactly.
//! Every tenth document of a source is a planted duplicate of an earlier
//! one, alternating byte-identical copies and copies with one extra token.

use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use super::document::{Document, Source};
use super::label::SentimentLabel;
use crate::entities::reference_companies;
use crate::llm_gateway::keywords::{match_tokens, rulebook};

const NEWS_MU: f64 = 5.463;
const NEWS_SIGMA: f64 = 0.5067;
const SOCIAL_MU: f64 = 2.687;
const SOCIAL_SIGMA: f64 = 0.990;
const MIN_WORDS: usize = 5;
const MAX_WORDS: usize = 1500;
const DUPLICATE_EVERY: usize = 10;

/// Token appended to near-duplicate copies; frequent enough in the filler
/// that its idf stays low.
pub const NEAR_DUPLICATE_TOKEN: &str = "في";

const FILLER: &[&str] = &[
    "في", "في", "في", "من", "من", "على", "على", "إلى", "عن", "مع", "بعد", "قبل", "خلال", "حيث", "كما", "وقد", "أن",
    "التي", "الذي", "هذا", "هذه", "ذلك", "بين", "عند", "حتى", "أيضا", "وفقا", "نحو", "حوالي", "لدى", "الشركة", "المجموعة",
    "القطاع", "الربع", "العام", "الحالي", "الماضي", "السنوي", "النتائج", "المالية", "الإدارة", "مجلس", "الإعلان",
    "البيان", "التقرير", "الأسبوع", "الشهر", "اليوم", "أمس", "المحللين", "المستثمرين", "المساهمين", "الاجتماع",
    "الخطة", "الاستراتيجية", "المشاريع", "العقود", "التوزيعات", "الإيرادات", "التكاليف", "المصاريف", "الحصة",
    "القيمة", "الأصول", "المطلوبات", "السيولة", "التمويل", "القروض", "الودائع", "السندات", "الصكوك", "الطلب", "العرض",
    "الإنتاج", "المبيعات", "التصدير", "الاستيراد", "المصنع", "الفرع", "الفروع", "العملاء", "الخدمات", "المنتجات",
    "الرقمية", "التقنية", "الطاقة", "النفط", "الغاز", "الكهرباء", "المياه", "الإسكان", "العقار", "التأمين", "الصحة",
    "التعليم", "النقل", "الموانئ", "الطيران", "السياحة", "الرياض", "جدة", "الدمام", "المملكة", "الخليج", "الحكومة",
    "الوزارة", "الهيئة", "التنظيمية", "الجديدة", "الأولى", "الثانية", "الثالثة", "الكبرى", "المحلية", "الدولية",
    "الإقليمية", "الرئيسية", "مليون", "مليار", "ريال", "بنسبة", "بقيمة", "بمبلغ", "بلغت", "بلغ", "أعلنت", "أوضحت",
    "أشارت", "ذكرت", "أكدت", "قالت", "أفاد", "يتوقع", "تتوقع", "تعتزم", "تخطط", "بدأت", "أنهت", "وقعت", "اتفاقية",
    "مذكرة", "تفاهم", "شراكة", "برنامج", "مبادرة", "رؤية", "المستقبل", "المرحلة", "الفترة", "المقارنة", "المماثلة",
    "الموحدة", "الأولية", "النهائية", "المعتمدة", "الجمعية", "العمومية", "الاجتماعات", "المقبلة", "الحالية",
];

const NOISE_SENTENCES: &[&str] = &["السلام عليكم.", "مرحبا بالجميع.", "تحية طيبة وبعد،", "صباح الخير يا متداولين."];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedDuplicate {
    pub duplicate_id: String,
    pub original_id: String,
    /// `false` for byte-identical copies, `true` for one-extra-token copies.
    pub near: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniCorpus {
    pub documents: Vec<Document>,
    /// Planted sentiment class per document id.
    pub truth: BTreeMap<String, SentimentLabel>,
    pub duplicates: Vec<PlantedDuplicate>,
}

impl MiniCorpus {
    pub fn exact_duplicate_count(&self) -> usize {
        self.duplicates.iter().filter(|d| !d.near).count()
    }

    pub fn near_duplicate_count(&self) -> usize {
        self.duplicates.iter().filter(|d| d.near).count()
    }
}

struct Vocab {
    filler: Vec<&'static str>,
    keywords: Vec<(SentimentLabel, Vec<String>)>,
    aliases: Vec<String>,
}

fn vocab() -> Vocab {
    let rb = rulebook();
    let keyword_tokens: std::collections::HashSet<String> = SentimentLabel::ALL
        .into_iter()
        .flat_map(|l| rb.keywords(l).iter().flat_map(|k| k.tokens.clone()))
        .collect();
    let clean = |s: &str| match_tokens(s).iter().all(|t| !keyword_tokens.contains(t));
    let filler = FILLER.iter().copied().filter(|w| clean(w)).collect();
    let keywords = SentimentLabel::ALL
        .into_iter()
        .map(|l| {
            let phrases = rb
                .self_consistent_keywords(l)
                .into_iter()
                .map(|k| k.phrase.clone())
                .collect();
            (l, phrases)
        })
        .collect();
    let aliases = reference_companies()
        .into_iter()
        .flat_map(|c| c.aliases)
        .filter(|a| clean(a))
        .collect();
    Vocab {
        filler,
        keywords,
        aliases,
    }
}

fn sample_length(rng: &mut ChaCha8Rng, source: Source) -> usize {
    let (mu, sigma) = match source {
        Source::News => (NEWS_MU, NEWS_SIGMA),
        Source::Social => (SOCIAL_MU, SOCIAL_SIGMA),
    };
    let dist = LogNormal::new(mu, sigma).expect("valid log-normal parameters");
    (dist.sample(rng).round() as usize).clamp(MIN_WORDS, MAX_WORDS)
}

fn filler_sentence(rng: &mut ChaCha8Rng, vocab: &Vocab, words: usize) -> Vec<String> {
    (0..words)
        .map(|_| vocab.filler.choose(rng).expect("filler vocabulary").to_string())
        .collect()
}

fn terminate(sentence: &mut [String]) {
    if let Some(last) = sentence.last_mut() {
        last.push('.');
    }
}

/// Body text of `target` content words whose first sentence carries `keyword`.
fn compose(rng: &mut ChaCha8Rng, vocab: &Vocab, source: Source, keyword: &str, target: usize) -> String {
    let mut sentences: Vec<Vec<String>> = Vec::new();
    let keyword_tokens: Vec<String> = keyword.split_whitespace().map(str::to_string).collect();
    let mut remaining = target.saturating_sub(keyword_tokens.len());

    let lead_extra = remaining.min(rng.random_range(2..=6));
    let mut first = keyword_tokens;
    first.extend(filler_sentence(rng, vocab, lead_extra));
    remaining -= lead_extra;
    terminate(&mut first);
    sentences.push(first);

    let mention_company = match source {
        Source::News => rng.random_bool(0.7),
        Source::Social => rng.random_bool(0.3),
    };
    if mention_company && remaining >= 3 {
        let alias = vocab.aliases.choose(rng).expect("aliases");
        let mut s = vec!["سهم".to_string()];
        s.extend(alias.split_whitespace().map(str::to_string));
        let extra = remaining.saturating_sub(s.len()).min(rng.random_range(1..=5));
        s.extend(filler_sentence(rng, vocab, extra));
        remaining = remaining.saturating_sub(s.len());
        terminate(&mut s);
        sentences.push(s);
    }
    while remaining > 0 {
        let len = remaining.min(rng.random_range(6..=16));
        let mut s = filler_sentence(rng, vocab, len);
        remaining -= len;
        terminate(&mut s);
        sentences.push(s);
    }

    let mut parts: Vec<String> = Vec::new();
    if rng.random_bool(0.15) {
        parts.push(NOISE_SENTENCES.choose(rng).expect("noise").to_string());
    }
    if source == Source::Social && rng.random_bool(0.3) {
        parts.push(format!("@trader{}", rng.random_range(1..999)));
    }
    parts.extend(sentences.into_iter().map(|s| s.join(" ")));
    if source == Source::Social {
        if rng.random_bool(0.25) {
            let tag = vocab.filler.choose(rng).expect("filler");
            parts.push(format!("#{tag}"));
        }
        if rng.random_bool(0.2) {
            parts.push(format!("https://t.co/{:08x}", rng.random::<u32>()));
        }
    }
    parts.join(" ")
}

fn generate_source(
    rng: &mut ChaCha8Rng,
    vocab: &Vocab,
    source: Source,
    n: usize,
    start: DateTime<Utc>,
    out: &mut MiniCorpus,
) {
    let mut originals: Vec<(usize, usize)> = Vec::new(); // (index into out.documents, word target)
    let mut near_next = false;
    let mut near_sources: HashSet<usize> = HashSet::new();
    for i in 0..n {
        let id = format!("{}-{:05}", source.as_str(), i + 1);
        let published_at = start + Duration::minutes(37 * i as i64 + rng.random_range(0..30));
        let is_duplicate = (i + 1) % DUPLICATE_EVERY == 0 && !originals.is_empty();
        if is_duplicate {
            let eligible: Vec<&(usize, usize)> = if near_next {
                originals
                    .iter()
                    .filter(|(o, w)| *w >= 12 && !near_sources.contains(o))
                    .collect()
            } else {
                originals.iter().collect()
            };
            if let Some(&&(orig_index, _)) = eligible.choose(rng) {
                let original = out.documents[orig_index].clone();
                let text = if near_next {
                    near_sources.insert(orig_index);
                    format!("{} {NEAR_DUPLICATE_TOKEN}", original.text)
                } else {
                    original.text.clone()
                };
                out.truth.insert(id.clone(), out.truth[&original.id]);
                out.duplicates.push(PlantedDuplicate {
                    duplicate_id: id.clone(),
                    original_id: original.id.clone(),
                    near: near_next,
                });
                out.documents.push(Document::new(id, source, text, published_at));
                near_next = !near_next;
                continue;
            }
        }
        let (label, phrases) = vocab.keywords.choose(rng).expect("five classes");
        let keyword = phrases.choose(rng).expect("keywords per class");
        let target = sample_length(rng, source);
        let text = compose(rng, vocab, source, keyword, target);
        out.truth.insert(id.clone(), *label);
        originals.push((out.documents.len(), target));
        out.documents.push(Document::new(id, source, text, published_at));
    }
}

/// Deterministic for a given seed.
pub fn generate_mini_corpus(seed: u64, n_news: usize, n_social: usize) -> MiniCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = vocab();
    let start = Utc.with_ymd_and_hms(2024, 1, 1, 6, 0, 0).single().expect("valid date");
    let mut corpus = MiniCorpus {
        documents: Vec::with_capacity(n_news + n_social),
        truth: BTreeMap::new(),
        duplicates: Vec::new(),
    };
    generate_source(&mut rng, &vocab, Source::News, n_news, start, &mut corpus);
    generate_source(&mut rng, &vocab, Source::Social, n_social, start, &mut corpus);
    corpus
}
