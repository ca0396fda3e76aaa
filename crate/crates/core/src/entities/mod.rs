//! Company entity linking.
//!
//! Candidate spans come from an optional [`NerProvider`] and from a lexicon
//! scan: every n-gram (n ≤ 4) near a financial term, plus every exact alias
//! occurrence. Each candidate is scored against every alias with
//! [`fuzzy_score`]; candidates at or above the threshold are resolved into
//! non-overlapping links, best score first.

mod fuzzy;
mod ner;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use fuzzy::{
    bounded_levenshtein, edit_similarity, fuzzy_match, fuzzy_score, levenshtein, token_similarity, MatchComponent,
    Prepared,
};
pub use ner::{DictionaryNer, HttpNer, NerError, NerProvider, NerSpan};

use crate::normalize::{normalize_text, strip_punctuation, NormalizationConfig};
use crate::Document;

pub const DEFAULT_LINK_THRESHOLD: f64 = 0.80;

const REFERENCE_COMPANIES: &str = include_str!("../../resources/entities/companies.jsonl");
const REFERENCE_LEXICON: &str = include_str!("../../resources/entities/financial_lexicon.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompanyRecord {
    pub company_id: String,
    pub canonical_name: String,
    pub aliases: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum EntitiesError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("companies line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate company_id `{0}`")]
    DuplicateCompany(String),
    #[error("company `{0}` has no aliases")]
    NoAliases(String),
    #[error("no companies loaded; entity linking needs at least one company record")]
    NoCompanies,
    #[error("link threshold must be in (0, 1], got {0}")]
    InvalidThreshold(f64),
}

pub fn parse_companies(text: &str) -> Result<Vec<CompanyRecord>, EntitiesError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CompanyRecord = serde_json::from_str(line).map_err(|e| EntitiesError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.aliases.iter().all(|a| a.trim().is_empty()) {
            return Err(EntitiesError::NoAliases(record.company_id));
        }
        if !seen.insert(record.company_id.clone()) {
            return Err(EntitiesError::DuplicateCompany(record.company_id));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_companies(path: impl AsRef<Path>) -> Result<Vec<CompanyRecord>, EntitiesError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EntitiesError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_companies(&text)
}

/// The shipped 25-company fixture.
pub fn reference_companies() -> Vec<CompanyRecord> {
    parse_companies(REFERENCE_COMPANIES).expect("shipped company fixture is valid")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FinancialLexicon {
    pub terms: BTreeSet<String>,
}

impl FinancialLexicon {
    /// One term per line; blank lines and `#` comments are skipped. Terms are
    /// normalized with `cfg`.
    pub fn parse(text: &str, cfg: &NormalizationConfig) -> Self {
        let terms = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| normalize_text(l, cfg))
            .filter(|t| !t.is_empty())
            .collect();
        Self { terms }
    }

    pub fn load(path: impl AsRef<Path>, cfg: &NormalizationConfig) -> Result<Self, EntitiesError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EntitiesError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::parse(&text, cfg))
    }

    /// The shipped ~200-term fixture.
    pub fn reference() -> Self {
        Self::parse(REFERENCE_LEXICON, &NormalizationConfig::default())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    NerProvider,
    LexiconScan,
}

/// Token span `[start, end)` over the content tokens of a normalized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityLink {
    pub document_id: String,
    pub surface: String,
    pub company_id: String,
    pub alias: String,
    pub score: f64,
    pub component: MatchComponent,
    pub provenance: Provenance,
    pub token_start: usize,
    pub token_end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkOutcome {
    pub links: Vec<EntityLink>,
    /// The NER provider failed and only the lexicon scan ran.
    pub ner_degraded: bool,
}

struct Token {
    text: String,
    start: usize,
    end: usize,
}

fn tokenize(text: &str) -> Vec<Token> {
    let base = text.as_ptr() as usize;
    text.split_whitespace()
        .filter_map(|raw| {
            let stripped = strip_punctuation(raw);
            if stripped.is_empty() {
                return None;
            }
            let start = stripped.as_ptr() as usize - base;
            Some(Token {
                text: stripped.to_string(),
                start,
                end: start + stripped.len(),
            })
        })
        .collect()
}

struct AliasEntry {
    company: usize,
    prepared: Prepared,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkerConfig {
    pub threshold: f64,
    /// Tokens on each side of a lexicon hit that candidate n-grams may reach.
    pub window: usize,
    pub max_ngram: usize,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_LINK_THRESHOLD,
            window: 4,
            max_ngram: 4,
        }
    }
}

/// Immutable alias and lexicon tables; share one across workers.
pub struct Linker {
    companies: Vec<CompanyRecord>,
    aliases: Vec<AliasEntry>,
    alias_by_tokens: HashMap<Vec<String>, Vec<usize>>,
    lexicon_by_first: HashMap<String, Vec<Vec<String>>>,
    lexicon_size: usize,
    config: LinkerConfig,
    normalization: NormalizationConfig,
}

impl Linker {
    pub fn new(
        companies: Vec<CompanyRecord>,
        lexicon: &FinancialLexicon,
        config: LinkerConfig,
        normalization: &NormalizationConfig,
    ) -> Result<Self, EntitiesError> {
        if companies.is_empty() {
            return Err(EntitiesError::NoCompanies);
        }
        if !(config.threshold > 0.0 && config.threshold <= 1.0) {
            return Err(EntitiesError::InvalidThreshold(config.threshold));
        }
        let mut aliases = Vec::new();
        let mut alias_by_tokens: HashMap<Vec<String>, Vec<usize>> = HashMap::new();
        for (ci, company) in companies.iter().enumerate() {
            let mut forms = BTreeSet::new();
            for alias in company.aliases.iter().chain(std::iter::once(&company.canonical_name)) {
                let tokens: Vec<String> = tokenize(&normalize_text(alias, normalization))
                    .into_iter()
                    .map(|t| t.text)
                    .collect();
                if !tokens.is_empty() {
                    forms.insert(tokens);
                }
            }
            for tokens in forms {
                alias_by_tokens.entry(tokens.clone()).or_default().push(aliases.len());
                aliases.push(AliasEntry {
                    company: ci,
                    prepared: Prepared::new(&tokens.join(" ")),
                });
            }
        }
        let mut lexicon_by_first: HashMap<String, Vec<Vec<String>>> = HashMap::new();
        for term in &lexicon.terms {
            let tokens: Vec<String> = tokenize(term).into_iter().map(|t| t.text).collect();
            if let Some(first) = tokens.first() {
                lexicon_by_first.entry(first.clone()).or_default().push(tokens);
            }
        }
        Ok(Self {
            companies,
            aliases,
            alias_by_tokens,
            lexicon_by_first,
            lexicon_size: lexicon.len(),
            config,
            normalization: normalization.clone(),
        })
    }

    /// Linker over the shipped fixtures.
    pub fn reference(threshold: f64) -> Result<Self, EntitiesError> {
        Self::new(
            reference_companies(),
            &FinancialLexicon::reference(),
            LinkerConfig {
                threshold,
                ..LinkerConfig::default()
            },
            &NormalizationConfig::default(),
        )
    }

    pub fn companies(&self) -> &[CompanyRecord] {
        &self.companies
    }

    pub fn lexicon_size(&self) -> usize {
        self.lexicon_size
    }

    pub fn threshold(&self) -> f64 {
        self.config.threshold
    }

    /// Normalized alias forms per company id.
    pub fn alias_forms(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for a in &self.aliases {
            out.entry(self.companies[a.company].company_id.as_str())
                .or_default()
                .push(a.prepared.text.as_str());
        }
        out
    }

    /// Candidate spans of `normalized` text. NER failures degrade to the
    /// lexicon scan; the second value reports that.
    pub fn extract_candidates(&self, normalized: &str, ner: Option<&dyn NerProvider>) -> (Vec<Candidate>, bool) {
        let tokens = tokenize(normalized);
        let (spans, degraded) = self.candidate_spans(normalized, &tokens, ner);
        let candidates = spans
            .into_iter()
            .map(|((start, end), provenance)| Candidate {
                start,
                end,
                surface: join(&tokens[start..end]),
                provenance,
            })
            .collect();
        (candidates, degraded)
    }

    fn candidate_spans(
        &self,
        text: &str,
        tokens: &[Token],
        ner: Option<&dyn NerProvider>,
    ) -> (BTreeMap<(usize, usize), Provenance>, bool) {
        let n = tokens.len();
        let mut spans = BTreeMap::new();
        let words: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        for i in 0..n {
            if let Some(terms) = self.lexicon_by_first.get(words[i]) {
                for term in terms {
                    if i + term.len() <= n && words[i..i + term.len()].iter().zip(term).all(|(w, t)| w == t) {
                        let lo = i.saturating_sub(self.config.window);
                        let hi = (i + term.len() + self.config.window).min(n);
                        for s in lo..hi {
                            for e in s + 1..=(s + self.config.max_ngram).min(hi) {
                                spans.insert((s, e), Provenance::LexiconScan);
                            }
                        }
                    }
                }
            }
        }
        for (alias_tokens, _) in self.alias_by_tokens.iter() {
            let len = alias_tokens.len();
            if len > n {
                continue;
            }
            for s in 0..=n - len {
                if words[s..s + len].iter().zip(alias_tokens).all(|(w, t)| w == t) {
                    spans.insert((s, s + len), Provenance::LexiconScan);
                }
            }
        }
        let mut degraded = false;
        if let Some(ner) = ner {
            match ner.organizations(text) {
                Ok(found) => {
                    for span in found {
                        let covered: Vec<usize> = (0..n)
                            .filter(|&i| tokens[i].start < span.end && span.start < tokens[i].end)
                            .collect();
                        if let (Some(&s), Some(&e)) = (covered.first(), covered.last()) {
                            spans.insert((s, e + 1), Provenance::NerProvider);
                        }
                    }
                }
                Err(e) => {
                    log::warn!("{e}; falling back to lexicon scan");
                    degraded = true;
                }
            }
        }
        (spans, degraded)
    }

    /// Best alias for `surface` at or above the threshold. Ties go to the
    /// longer alias, then the smaller company id.
    fn best_alias(&self, surface: &Prepared) -> Option<(usize, f64, MatchComponent)> {
        let mut best: Option<(usize, f64, MatchComponent)> = None;
        for (ai, alias) in self.aliases.iter().enumerate() {
            let Some((score, component)) = surface.score_at_least(&alias.prepared, self.config.threshold) else {
                continue;
            };
            let better = match best {
                None => true,
                Some((bi, bs, _)) => {
                    let cur = &self.aliases[bi];
                    score > bs
                        || (score == bs
                            && (alias.prepared.char_len(), std::cmp::Reverse(&self.companies[alias.company].company_id))
                                > (cur.prepared.char_len(), std::cmp::Reverse(&self.companies[cur.company].company_id)))
                }
            };
            if better {
                best = Some((ai, score, component));
            }
        }
        best
    }

    /// Links in `normalized` text, ordered by position.
    pub fn link_text(&self, document_id: &str, normalized: &str, ner: Option<&dyn NerProvider>) -> LinkOutcome {
        let tokens = tokenize(normalized);
        let (spans, ner_degraded) = self.candidate_spans(normalized, &tokens, ner);
        let mut memo: HashMap<String, Option<(usize, f64, MatchComponent)>> = HashMap::new();
        let mut scored = Vec::new();
        for ((start, end), provenance) in spans {
            let surface = join(&tokens[start..end]);
            let hit = *memo
                .entry(surface.clone())
                .or_insert_with(|| self.best_alias(&Prepared::new(&surface)));
            if let Some((alias, score, component)) = hit {
                scored.push((start, end, surface, alias, score, component, provenance));
            }
        }
        scored.sort_by(|a, b| {
            b.4.total_cmp(&a.4)
                .then((b.1 - b.0).cmp(&(a.1 - a.0)))
                .then(a.0.cmp(&b.0))
        });
        let mut taken = vec![false; tokens.len()];
        let mut links = Vec::new();
        for (start, end, surface, alias, score, component, provenance) in scored {
            if taken[start..end].iter().any(|t| *t) {
                continue;
            }
            taken[start..end].iter_mut().for_each(|t| *t = true);
            let entry = &self.aliases[alias];
            links.push(EntityLink {
                document_id: document_id.to_string(),
                surface,
                company_id: self.companies[entry.company].company_id.clone(),
                alias: entry.prepared.text.clone(),
                score,
                component,
                provenance,
                token_start: start,
                token_end: end,
            });
        }
        links.sort_by_key(|l| l.token_start);
        LinkOutcome { links, ner_degraded }
    }

    /// Links a normalized document and records the distinct company ids in
    /// order of first mention.
    pub fn link_document(&self, doc: &mut Document, ner: Option<&dyn NerProvider>) -> LinkOutcome {
        let outcome = self.link_text(&doc.id, &doc.normalized_text, ner);
        let mut ids: Vec<String> = Vec::new();
        for link in &outcome.links {
            if !ids.contains(&link.company_id) {
                ids.push(link.company_id.clone());
            }
        }
        doc.company_ids = ids;
        outcome
    }

    pub fn normalization(&self) -> &NormalizationConfig {
        &self.normalization
    }
}

fn join(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
}

/// One-shot linking against `companies` with the shipped lexicon and no NER.
pub fn link_entities(
    doc: &mut Document,
    companies: &[CompanyRecord],
    threshold: f64,
) -> Result<Vec<EntityLink>, EntitiesError> {
    let linker = Linker::new(
        companies.to_vec(),
        &FinancialLexicon::reference(),
        LinkerConfig {
            threshold,
            ..LinkerConfig::default()
        },
        &NormalizationConfig::default(),
    )?;
    Ok(linker.link_document(doc, None).links)
}
