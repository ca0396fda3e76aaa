mod common;

use std::collections::BTreeSet;

use common::{fuzzy_oracle, levenshtein_oracle, mutate, rng, WholeSpan};
use finsent::corpus::generate_mini_corpus;
use finsent::entities::{
    fuzzy_score, levenshtein, EntityLink, Linker, NerError, NerProvider, NerSpan, DEFAULT_LINK_THRESHOLD,
};
use finsent::normalize::{normalize_text, NormalizationConfig};
use proptest::prelude::*;
use rayon::prelude::*;

fn norm(s: &str) -> String {
    normalize_text(s, &NormalizationConfig::default())
}

fn linker() -> Linker {
    Linker::reference(DEFAULT_LINK_THRESHOLD).unwrap()
}

fn all_forms(linker: &Linker) -> Vec<(String, String)> {
    linker
        .alias_forms()
        .into_iter()
        .flat_map(|(id, forms)| forms.into_iter().map(move |f| (id.to_string(), f.to_string())))
        .collect()
}

fn best_oracle(surface: &str, forms: &[(String, String)]) -> f64 {
    forms.iter().map(|(_, f)| fuzzy_oracle(surface, f)).fold(0.0, f64::max)
}

fn check_integrity(linker: &Linker, text: &str, links: &[EntityLink]) {
    let forms = linker.alias_forms();
    let tokens: Vec<&str> = text
        .split_whitespace()
        .map(finsent::normalize::strip_punctuation)
        .filter(|t| !t.is_empty())
        .collect();
    let mut covered = BTreeSet::new();
    for l in links {
        let owned = forms.get(l.company_id.as_str()).expect("link to unknown company");
        assert!(owned.contains(&l.alias.as_str()), "{} is not an alias of {}", l.alias, l.company_id);
        assert!(l.token_start < l.token_end && l.token_end <= tokens.len());
        assert_eq!(l.surface, tokens[l.token_start..l.token_end].join(" "));
        assert!(l.score >= linker.threshold() && l.score <= 1.0);
        for t in l.token_start..l.token_end {
            assert!(covered.insert(t), "links overlap at token {t}");
        }
    }
}

#[test]
fn exact_aliases_link_with_full_score() {
    let linker = linker();
    let forms = all_forms(&linker);
    assert!(forms.len() >= 25);
    for (_, form) in &forms {
        let text = norm(&format!("أعلنت {form} عن نتائجها"));
        let owners: BTreeSet<&str> = forms.iter().filter(|(_, f)| f == form).map(|(id, _)| id.as_str()).collect();
        let links = linker.link_text("d", &text, None).links;
        let hit = links.iter().find(|l| &l.surface == form);
        let hit = hit.unwrap_or_else(|| panic!("alias `{form}` not linked in `{text}`: {links:?}"));
        assert_eq!(hit.score, 1.0, "alias `{form}`");
        assert!(owners.contains(hit.company_id.as_str()));
        check_integrity(&linker, &text, &links);
    }
}

#[test]
fn mutated_aliases_agree_with_the_oracle() {
    let linker = linker();
    let forms = all_forms(&linker);
    let mut r = rng(11);
    let (mut linked, mut rejected) = (0, 0);
    for (_, form) in &forms {
        for trial in 0..6 {
            let p = norm(&mutate(form, 1 + trial % 2, &mut r));
            if p.trim().is_empty() {
                continue;
            }
            let (candidates, degraded) = linker.extract_candidates(&p, Some(&WholeSpan));
            assert!(!degraded);
            let oracle = candidates.iter().map(|c| best_oracle(&c.surface, &forms)).fold(0.0, f64::max);
            let links = linker.link_text("m", &p, Some(&WholeSpan)).links;
            assert_eq!(!links.is_empty(), oracle >= DEFAULT_LINK_THRESHOLD, "`{p}` from `{form}`: oracle {oracle}");
            if best_oracle(&p, &forms) >= DEFAULT_LINK_THRESHOLD {
                assert!(!links.is_empty(), "`{p}` scores above threshold as a whole yet has no link");
            }
            for l in &links {
                assert!((l.score - fuzzy_oracle(&l.surface, &l.alias)).abs() <= 1e-12);
                assert!((l.score - best_oracle(&l.surface, &forms)).abs() <= 1e-12);
            }
            check_integrity(&linker, &p, &links);
            if links.is_empty() {
                rejected += 1;
            } else {
                linked += 1;
            }
        }
    }
    assert!(linked > 0 && rejected > 0, "harness exercised only one side: {linked} linked, {rejected} rejected");
}

#[test]
fn raising_the_threshold_only_removes_low_links() {
    let corpus = generate_mini_corpus(3, 30, 60);
    let low = Linker::reference(0.70).unwrap();
    let high = Linker::reference(0.90).unwrap();
    for doc in &corpus.documents {
        let text = norm(&doc.text);
        let a = low.link_text(&doc.id, &text, None).links;
        let b = high.link_text(&doc.id, &text, None).links;
        let filtered: Vec<_> = a.into_iter().filter(|l| l.score >= 0.90).collect();
        assert_eq!(b, filtered, "{}", doc.id);
    }
}

#[test]
fn linking_is_independent_of_worker_count() {
    let corpus = generate_mini_corpus(5, 40, 120);
    let linker = linker();
    let texts: Vec<(String, String)> = corpus.documents.iter().map(|d| (d.id.clone(), norm(&d.text))).collect();
    let serial: Vec<_> = texts.iter().map(|(id, t)| linker.link_text(id, t, None).links).collect();
    for workers in [2, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
        let parallel: Vec<_> =
            pool.install(|| texts.par_iter().map(|(id, t)| linker.link_text(id, t, None).links).collect());
        assert_eq!(parallel, serial);
    }
    let total: usize = serial.iter().map(Vec::len).sum();
    assert!(total > 0);
    for ((_, t), links) in texts.iter().zip(&serial) {
        check_integrity(&linker, t, links);
    }
}

#[test]
fn failing_ner_degrades_to_the_lexicon_scan() {
    struct Down;
    impl NerProvider for Down {
        fn organizations(&self, _: &str) -> Result<Vec<NerSpan>, NerError> {
            Err(NerError("connection refused".into()))
        }
    }
    let linker = linker();
    let text = norm("ارتفع سهم ارامكو في السوق");
    let plain = linker.link_text("d", &text, None);
    let degraded = linker.link_text("d", &text, Some(&Down));
    assert!(degraded.ner_degraded && !plain.ner_degraded);
    assert_eq!(degraded.links, plain.links);
}

proptest! {
    #[test]
    fn levenshtein_matches_the_recursive_oracle(a in "[ابت ]{0,7}", b in "[ابت ]{0,7}") {
        let ca: Vec<char> = a.chars().collect();
        let cb: Vec<char> = b.chars().collect();
        prop_assert_eq!(levenshtein(&ca, &cb), levenshtein_oracle(&ca, &cb));
    }

    #[test]
    fn fuzzy_score_matches_the_oracle(a in "[abc]{1,4}( [abc]{1,4}){0,3}", b in "[abc]{1,4}( [abc]{1,4}){0,3}") {
        let s = fuzzy_score(&a, &b);
        prop_assert!((s - fuzzy_oracle(&a, &b)).abs() <= 1e-12);
        prop_assert!((s - fuzzy_score(&b, &a)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(fuzzy_score(&a, &a), 1.0);
    }
}
