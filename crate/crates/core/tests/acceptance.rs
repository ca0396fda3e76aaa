//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Tolerances are pinned below.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use finsent::corpus::{generate_mini_corpus, ConsensusResult, Durability, LabelVote, MiniCorpus};
use finsent::dedup::{dedup_pass, DedupConfig, DedupReport, HashingEmbedder, Verdict};
use finsent::entities::{Linker, DEFAULT_LINK_THRESHOLD};
use finsent::llm_gateway::{
    classify_sentiment, estimate_cost, Backend, BackendConfig, MockStyle, MockTransport, Pricing, ResponseCache,
    TokenUsage,
};
use finsent::metrics::{
    chi_square_independence, classification_report, cohen_kappa, fleiss_kappa, js_divergence, label_consistency,
    paired_t_test, pearson_ordinal, rouge_l, rouge_n,
};
use finsent::normalize::{content_tokens, normalize_text, word_count, NormalizationConfig};
use finsent::pipeline::{
    files, label_with_consensus, route_with_boundary, LabelInput, LabelOutcome, LabeledRecord, Pipeline,
    QuarantineRecord, Route, RunConfig, RunManifest, SummaryRecord, VoteRecord, DEFAULT_ROUTE_BOUNDARY,
};
use finsent::{Document, SentimentLabel, Source};
use rand::seq::SliceRandom;

/// Metric values against their oracles.
const TOL: f64 = 1e-9;
/// p-values against their oracles.
const P_TOL: f64 = 1e-6;
const TRUTH_TABLE_BUDGET: Duration = Duration::from_secs(1);
const LABELING_BUDGET: Duration = Duration::from_secs(60);
const THROUGHPUT_DOCUMENTS: usize = 1000;
/// Half a cent.
const COST_TOL: f64 = 0.005;
const NEAR_ORACLE_MIN: f64 = 0.90;
const SEED: u64 = 7;
const N_NEWS: usize = 50;
const N_SOCIAL: usize = 200;
/// Label checkpoints written before the simulated crash.
const CRASH_AFTER_LABELS: usize = 40;
const CRASH_DIR_ENV: &str = "FINSENT_ACCEPTANCE_CRASH_DIR";

const COMPARED: [&str; 13] = [
    files::INGESTED,
    files::NORMALIZED,
    files::DEDUPED,
    files::DEDUP_AUDIT,
    files::LINKED,
    files::LINKS,
    files::ROUTED,
    files::ROUTES,
    files::SUMMARIES,
    files::VOTES,
    files::LABELED,
    files::QUARANTINE,
    files::ERRORS,
];

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn config() -> RunConfig {
    RunConfig::default()
}

fn mini_corpus() -> MiniCorpus {
    generate_mini_corpus(SEED, N_NEWS, N_SOCIAL)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, String> {
    finsent::corpus::read_jsonl(path).map_err(err)
}

fn run_into(dir: &Path, cfg: RunConfig, docs: &[Document]) -> Result<RunManifest, String> {
    Pipeline::open(cfg, dir).map_err(err)?.run(docs).map_err(err)
}

fn identical_outputs(a: &Path, b: &Path) -> Result<(), String> {
    for f in COMPARED {
        let x = std::fs::read(a.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read(b.join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(x == y, || format!("{f} differs"))?;
    }
    Ok(())
}

// ------------------------------------------------------------------ 1

fn consensus_truth_table() -> Outcome {
    let vote = |model: &str, label| LabelVote {
        document_id: "d".into(),
        model_id: model.into(),
        label,
        latency_ms: 0.0,
        usage: TokenUsage::default(),
    };
    let started = Instant::now();
    let mut checked = 0;
    for a in SentimentLabel::ALL {
        for b in SentimentLabel::ALL {
            for c in SentimentLabel::ALL {
                let r = ConsensusResult::from_votes("d", vec![vote("x", a), vote("y", b), vote("z", c)], vec![])
                    .map_err(err)?;
                let expected = modal_oracle([a, b, c]);
                ensure((r.outcome, r.final_label) == expected, || {
                    format!("{a:?} {b:?} {c:?}: got {:?}/{:?}, oracle {expected:?}", r.outcome, r.final_label)
                })?;
                let confidence = expected.1.map(|l| [a, b, c].iter().filter(|&&v| v == l).count() as f64 / 3.0);
                ensure(r.confidence == confidence, || format!("{a:?} {b:?} {c:?}: confidence {:?}", r.confidence))?;
                checked += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    ensure(checked == 125, || format!("{checked} combinations"))?;
    ensure(elapsed < TRUTH_TABLE_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("125/125 combinations in {elapsed:?}"))
}

// ------------------------------------------------------------------ 2

fn metric_oracles() -> Outcome {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut bump = |name| *counts.entry(name).or_default() += 1;

    for (a, b) in kappa_fixtures() {
        let k = cohen_kappa(&a, &b).map_err(err)?.value;
        ensure(close(k, kappa_oracle(&a, &b), TOL), || format!("cohen_kappa {a:?} {b:?}"))?;
        bump("cohen_kappa");
    }
    for votes in fleiss_fixtures() {
        let k = fleiss_kappa(&votes).map_err(err)?.value;
        ensure(close(k, fleiss_oracle(&votes), TOL), || format!("fleiss_kappa {votes:?}"))?;
        bump("fleiss_kappa");
    }
    for (p, q) in jsd_fixtures() {
        let d = js_divergence(&p, &q).map_err(err)?;
        ensure(close(d, jsd_oracle(&p, &q), TOL), || format!("js_divergence {p:?} {q:?}"))?;
        bump("js_divergence");
    }
    for table in chi_fixtures() {
        let c = chi_square_independence(&table).map_err(err)?;
        let o = chi_square_oracle(&table);
        ensure(close(c.statistic, o.statistic, TOL) && c.dof as f64 == o.dof, || format!("chi_square {table:?}"))?;
        ensure(close(c.p_value, o.p_value, P_TOL), || format!("chi_square p {table:?}"))?;
        bump("chi_square");
    }
    for (a, b) in pearson_fixtures() {
        let r = pearson_ordinal(&a, &b).map_err(err)?;
        let x: Vec<f64> = a.iter().map(|&l| ordinal(l)).collect();
        let y: Vec<f64> = b.iter().map(|&l| ordinal(l)).collect();
        ensure(close(r, pearson_oracle(&x, &y), TOL), || format!("pearson {a:?} {b:?}"))?;
        bump("pearson_ordinal");
    }
    for (reference, candidate) in rouge_fixtures() {
        let r1 = rouge_n(&reference, &candidate, 1);
        let (p, r, f) = rouge1_oracle(&reference, &candidate);
        ensure(close(r1.precision, p, TOL) && close(r1.recall, r, TOL) && close(r1.f1, f, TOL), || {
            format!("rouge1 {reference} | {candidate}")
        })?;
        let rl = rouge_l(&reference, &candidate);
        let (p, r, f) = rouge_l_oracle(&reference, &candidate);
        ensure(close(rl.precision, p, TOL) && close(rl.recall, r, TOL) && close(rl.f1, f, TOL), || {
            format!("rouge_l {reference} | {candidate}")
        })?;
        bump("rouge");
    }
    for (x, y) in t_test_fixtures() {
        let t = paired_t_test(&x, &y).map_err(err)?;
        let o = t_test_oracle(&x, &y);
        ensure(close(t.t, o.t, TOL) && close(t.p_value, o.p_value, P_TOL), || format!("paired_t_test {x:?} {y:?}"))?;
        bump("paired_t_test");
    }

    // hand-worked examples
    let k = cohen_kappa(&[1, 1, 0, 0, 1], &[1, 0, 0, 0, 1]).map_err(err)?.value;
    ensure(close(k, (0.8 - 0.48) / (1.0 - 0.48), TOL), || format!("cohen hand example {k}"))?;
    let k = fleiss_kappa(&[vec![0, 0, 1], vec![1, 1, 1]]).map_err(err)?.value;
    ensure(close(k, (2.0 / 3.0 - 5.0 / 9.0) / (1.0 - 5.0 / 9.0), TOL), || format!("fleiss hand example {k}"))?;
    let c = chi_square_independence(&[vec![10.0, 0.0], vec![0.0, 10.0]]).map_err(err)?;
    ensure(c.statistic == 20.0 && c.dof == 1, || format!("chi hand example {c:?}"))?;
    let r = rouge_n("a b c d", "a b x", 1);
    ensure(close(r.f1, 4.0 / 7.0, TOL), || format!("rouge hand example {}", r.f1))?;
    let t = paired_t_test(&[2.0, 4.0, 6.0, 8.0, 10.0], &[1.0, 2.0, 3.0, 4.0, 5.0]).map_err(err)?;
    ensure(close(t.t, 3.0 / (2.5f64.sqrt() / 5f64.sqrt()), TOL), || format!("t hand example {}", t.t))?;
    let r = pearson_ordinal(&labels(&[-2, 0, 2]), &labels(&[-1, 0, 1])).map_err(err)?;
    ensure(close(r, 1.0, TOL), || format!("pearson hand example {r}"))?;

    let thin: Vec<_> = counts.iter().filter(|(_, &n)| n < 5).collect();
    ensure(thin.is_empty() && counts.len() == 7, || format!("too few fixtures: {counts:?}"))?;
    Ok(format!(
        "{} fixtures across {} metrics plus hand examples (tol {TOL:e}, p {P_TOL:e})",
        counts.values().sum::<usize>(),
        counts.len()
    ))
}

// ------------------------------------------------------------------ 3

fn class_collapse() -> Outcome {
    let gold: Vec<SentimentLabel> = SentimentLabel::ALL.iter().flat_map(|&l| std::iter::repeat_n(l, 40)).collect();
    let perfect = classification_report(&gold, &gold).map_err(err)?;
    let collapsed_pred: Vec<_> = gold.iter().map(|l| l.collapsed()).collect();
    let collapsed = classification_report(&gold, &collapsed_pred).map_err(err)?;
    let mapping_accuracy = gold.iter().filter(|l| l.collapsed() == **l).count() as f64 / gold.len() as f64;
    ensure(collapsed.macro_f1 < perfect.macro_f1, || {
        format!("macro-F1 did not drop: {} vs {}", collapsed.macro_f1, perfect.macro_f1)
    })?;
    ensure(collapsed.accuracy >= mapping_accuracy, || {
        format!("accuracy {} below mapping accuracy {mapping_accuracy}", collapsed.accuracy)
    })?;
    ensure(collapsed.macro_f1 < collapsed.accuracy, || "macro-F1 not below accuracy".into())?;

    // the same pattern from the mock backends on generated text
    let corpus = generate_mini_corpus(SEED, 40, 160);
    let score = |style: MockStyle| -> Result<(f64, f64), String> {
        let backend = Backend::new(BackendConfig::mock("m"), Arc::new(MockTransport::new(style)), None);
        let mut g = Vec::new();
        let mut p = Vec::new();
        for d in &corpus.documents {
            let text = normalize_text(&d.text, &NormalizationConfig::default());
            g.push(corpus.truth[&d.id]);
            p.push(classify_sentiment(&backend, &text).map_err(err)?.label);
        }
        let r = classification_report(&g, &p).map_err(err)?;
        Ok((r.macro_f1, r.accuracy))
    };
    let (full_f1, _) = score(MockStyle::Keyword)?;
    let (collapsed_f1, collapsed_acc) = score(MockStyle::Collapsed)?;
    ensure(collapsed_f1 < full_f1, || format!("mock collapse did not lower macro-F1: {collapsed_f1} vs {full_f1}"))?;
    Ok(format!(
        "balanced gold: macro-F1 {:.3} -> {:.3}, accuracy {:.3} >= {:.3}; mock: macro-F1 {:.3} -> {:.3} (acc {:.3})",
        perfect.macro_f1, collapsed.macro_f1, collapsed.accuracy, mapping_accuracy, full_f1, collapsed_f1, collapsed_acc
    ))
}

// ------------------------------------------------------------------ 4

fn entity_linking() -> Outcome {
    let linker = Linker::reference(DEFAULT_LINK_THRESHOLD).map_err(err)?;
    ensure(linker.companies().len() == 25, || format!("{} companies", linker.companies().len()))?;
    let forms: Vec<(String, String)> = linker
        .alias_forms()
        .into_iter()
        .flat_map(|(id, fs)| fs.into_iter().map(move |f| (id.to_string(), f.to_string())))
        .collect();
    let norm = |s: &str| normalize_text(s, &NormalizationConfig::default());
    for (_, form) in &forms {
        let text = norm(&format!("أعلنت {form} عن نتائجها"));
        let links = linker.link_text("d", &text, None).links;
        let hit = links.iter().find(|l| &l.surface == form).ok_or_else(|| format!("`{form}` not linked"))?;
        ensure(hit.score == 1.0, || format!("`{form}` scored {}", hit.score))?;
        ensure(forms.iter().any(|(id, f)| f == form && *id == hit.company_id), || {
            format!("`{form}` linked to {}", hit.company_id)
        })?;
    }

    let best = |surface: &str| forms.iter().map(|(_, f)| fuzzy_oracle(surface, f)).fold(0.0, f64::max);
    let mut r = rng(11);
    let (mut agree, mut total, mut kept, mut dropped) = (0, 0, 0, 0);
    for (_, form) in &forms {
        for trial in 0..6 {
            let p = norm(&mutate(form, 1 + trial % 2, &mut r));
            if p.trim().is_empty() {
                continue;
            }
            total += 1;
            let (candidates, _) = linker.extract_candidates(&p, Some(&WholeSpan));
            let oracle = candidates.iter().map(|c| best(&c.surface)).fold(0.0, f64::max);
            let links = linker.link_text("m", &p, Some(&WholeSpan)).links;
            let scores_match = links.iter().all(|l| (l.score - best(&l.surface)).abs() <= 1e-12);
            if (!links.is_empty()) == (oracle >= DEFAULT_LINK_THRESHOLD) && scores_match {
                agree += 1;
            }
            if links.is_empty() {
                dropped += 1;
            } else {
                kept += 1;
            }
        }
    }
    ensure(agree == total, || format!("{agree}/{total} mutations agree with the oracle"))?;
    ensure(kept > 0 && dropped > 0, || format!("one-sided harness: {kept} kept, {dropped} dropped"))?;
    Ok(format!(
        "{} exact aliases at 1.0; {agree}/{total} mutations agree ({kept} kept, {dropped} dropped)",
        forms.len()
    ))
}

// ------------------------------------------------------------------ 5

fn routing_boundary() -> Outcome {
    let doc = |words| {
        let mut d = Document::new("d", Source::News, "", chrono::Utc::now());
        d.word_count = words;
        d
    };
    let boundary = config().route_boundary;
    ensure(boundary == DEFAULT_ROUTE_BOUNDARY && boundary == 100, || format!("boundary {boundary}"))?;
    let got: Vec<Route> = [99, 100, 101].iter().map(|&w| route_with_boundary(&doc(w), boundary).route).collect();
    ensure(got == [Route::DirectToLabeling, Route::SummarizeFirst, Route::SummarizeFirst], || format!("{got:?}"))?;
    Ok("99 -> direct, 100 -> summarize, 101 -> summarize".into())
}

// ------------------------------------------------------------------ 6

fn normalized_docs(docs: &[Document]) -> Vec<Document> {
    let cfg = NormalizationConfig::default();
    docs.iter()
        .cloned()
        .map(|mut d| {
            d.normalized_text = normalize_text(&d.text, &cfg);
            d.word_count = word_count(&d.normalized_text);
            d
        })
        .collect()
}

fn partition(report: &DedupReport) -> BTreeMap<String, (Verdict, Option<String>)> {
    report
        .decisions
        .iter()
        .map(|d| (d.document_id.clone(), (d.verdict, d.duplicate_of.clone())))
        .collect()
}

fn dedup_criterion() -> Outcome {
    let corpus = mini_corpus();
    let docs = normalized_docs(&corpus.documents);
    let cfg = DedupConfig::default();
    let embedder = HashingEmbedder::new(1024);
    let report = dedup_pass(&docs, &cfg, Some(&embedder)).map_err(err)?;

    // oracle cosine for the planted near pairs, fitted on the exact-pass survivors
    let mut ordered: Vec<&Document> = docs.iter().collect();
    ordered.sort_by_key(|d| (d.published_at, d.id.clone()));
    let mut seen = std::collections::HashSet::new();
    let survivors: Vec<&Document> = ordered.into_iter().filter(|d| seen.insert(d.normalized_text.clone())).collect();
    let index: HashMap<&str, usize> = survivors.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    let tokens: Vec<Vec<String>> = survivors
        .iter()
        .map(|d| content_tokens(&d.normalized_text).into_iter().map(String::from).collect())
        .collect();
    let mut m = 0;
    for planted in corpus.duplicates.iter().filter(|p| p.near) {
        let (i, j) = (index[planted.duplicate_id.as_str()], index[planted.original_id.as_str()]);
        let cos = tfidf_cosine_oracle(&tokens, i, j);
        ensure(cos >= NEAR_ORACLE_MIN, || format!("planted pair {} has oracle cosine {cos}", planted.duplicate_id))?;
        m += 1;
    }
    let k = corpus.exact_duplicate_count();
    let (exact, near) = (report.count(Verdict::DropExact), report.count(Verdict::DropNear));
    ensure(exact == k, || format!("{exact} DropExact, planted {k}"))?;
    ensure(near >= m, || format!("{near} DropNear, planted {m}"))?;

    let base = partition(&report);
    for seed in 0..5 {
        let mut shuffled = docs.clone();
        shuffled.shuffle(&mut rng(seed));
        let again = dedup_pass(&shuffled, &cfg, Some(&embedder)).map_err(err)?;
        ensure(partition(&again) == base, || format!("permutation {seed} changed the partition"))?;
    }
    Ok(format!("k={k} DropExact={exact}; m={m} DropNear={near}; partition stable under 5 permutations"))
}

// ------------------------------------------------------------------ 7

/// Child process: runs until the label stage has checkpointed
/// `CRASH_AFTER_LABELS` documents, then dies without cleanup.
fn crash_child(dir: &Path) -> ExitCode {
    let corpus = mini_corpus();
    let pipeline = match Pipeline::open(config(), dir) {
        Ok(p) => p.with_progress(|stage, n| {
            if stage == "label" && n >= CRASH_AFTER_LABELS {
                std::process::abort();
            }
        }),
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
    };
    let _ = pipeline.run(&corpus.documents);
    // reaching this point means the crash never happened
    ExitCode::SUCCESS
}

fn determinism_and_recovery(scratch: &Path) -> Outcome {
    let corpus = mini_corpus();
    let (a, b, crashed) = (scratch.join("run-a"), scratch.join("run-b"), scratch.join("crashed"));
    let first = run_into(&a, config(), &corpus.documents)?;
    run_into(&b, config(), &corpus.documents)?;
    identical_outputs(&a, &b).map_err(|e| format!("two clean runs: {e}"))?;
    ensure(first.conserved, || "document counts not conserved".into())?;

    let status = Command::new(std::env::current_exe().map_err(err)?)
        .env(CRASH_DIR_ENV, &crashed)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .map_err(err)?;
    ensure(!status.success(), || "child finished instead of crashing".into())?;
    let store = finsent::corpus::CheckpointStore::open(crashed.join("checkpoints"), Durability::Fsync).map_err(err)?;
    let labeled_before = store.load("label").map_err(err)?.len();
    let to_label = first.stage("label").map(|s| s.counts.input).unwrap_or(0);
    ensure(labeled_before >= CRASH_AFTER_LABELS && labeled_before < to_label, || {
        format!("crash left {labeled_before} of {to_label} label checkpoints")
    })?;
    let cache_before = ResponseCache::open(crashed.join("cache")).map_err(err)?.len();

    let resumed = run_into(&crashed, config(), &corpus.documents)?;
    identical_outputs(&a, &crashed).map_err(|e| format!("resumed run: {e}"))?;
    let cache_after = ResponseCache::open(crashed.join("cache")).map_err(err)?.len();
    let new_entries = (cache_after - cache_before) as u64;
    ensure(resumed.network_calls() == new_entries, || {
        format!("resume made {} network calls for {new_entries} new cache entries", resumed.network_calls())
    })?;
    let label_resumed = resumed.stage("label").map(|s| s.resumed).unwrap_or(0);
    ensure(label_resumed >= labeled_before, || format!("only {label_resumed} label checkpoints reused"))?;
    Ok(format!(
        "clean runs identical; crash after {labeled_before}/{to_label} labels, resume identical, \
         {} network calls = {new_entries} new cache entries, {} cache hits",
        resumed.network_calls(),
        resumed.cache_hits()
    ))
}

// ------------------------------------------------------------------ 8

fn mock_hallucination(scratch: &Path) -> Outcome {
    let dir = scratch.join("run-a");
    if !dir.join(files::LABELED).exists() {
        run_into(&dir, config(), &mini_corpus().documents)?;
    }
    let pipeline = Pipeline::open(config(), &dir).map_err(err)?;
    let evaluation = pipeline.evaluate(None).map_err(err)?;
    let series = &evaluation.summary_quality.series;
    ensure(!series.is_empty(), || "no summaries were produced".into())?;
    let bad: Vec<_> = series.iter().filter(|s| s.hallucination_ratio != 0.0).map(|s| &s.document_id).collect();
    ensure(bad.is_empty(), || format!("non-zero hallucination in {bad:?}"))?;

    let labeled: Vec<LabeledRecord> = read_jsonl(&dir.join(files::LABELED))?;
    let backends: Vec<Backend> = config()
        .labelers
        .iter()
        .map(|c| Backend::from_config(c.clone(), None))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let mut pairs = Vec::new();
    for r in labeled.iter().filter(|r| r.label_input == LabelInput::Summary) {
        let via_summary = r.consensus.final_label.ok_or_else(|| format!("{} has no summary label", r.document.id))?;
        let direct = match label_with_consensus(&r.document.id, &r.document.normalized_text, &backends).map_err(err)? {
            LabelOutcome::Consensus(c) => c.final_label,
            LabelOutcome::Quarantine(_) => None,
        };
        let direct = direct.ok_or_else(|| format!("{} has no direct label", r.document.id))?;
        pairs.push((via_summary, direct));
    }
    ensure(pairs.len() == series.len(), || format!("{} summary labels for {} summaries", pairs.len(), series.len()))?;
    let consistency = label_consistency(&pairs).map_err(err)?;
    ensure(consistency == 100.0, || format!("label consistency {consistency}%"))?;
    Ok(format!("{} summaries, hallucination 0, label consistency {consistency}%", series.len()))
}

// ------------------------------------------------------------------ 9

fn priced(cfg: RunConfig, input: f64, output: f64) -> RunConfig {
    let pricing = Pricing {
        input_usd_per_1m: input,
        output_usd_per_1m: output,
    };
    let mut cfg = cfg;
    cfg.summarizer.pricing = pricing;
    for l in &mut cfg.labelers {
        l.pricing = pricing;
    }
    cfg
}

fn throughput_and_cost(scratch: &Path) -> Outcome {
    // throughput: the label stage over at least 1000 documents
    let corpus = generate_mini_corpus(SEED + 1, 120, 1000);
    let dir = scratch.join("throughput");
    let pipeline = Pipeline::open(config(), &dir).map_err(err)?;
    pipeline.ingest(&corpus.documents).map_err(err)?;
    pipeline.normalize().map_err(err)?;
    pipeline.dedup().map_err(err)?;
    pipeline.link().map_err(err)?;
    pipeline.route().map_err(err)?;
    pipeline.summarize().map_err(err)?;
    let started = Instant::now();
    let label = pipeline.label().map_err(err)?;
    let elapsed = started.elapsed();
    ensure(label.counts.input >= THROUGHPUT_DOCUMENTS, || format!("only {} documents labeled", label.counts.input))?;
    ensure(label.counts.errored == 0, || format!("{} labeling errors", label.counts.errored))?;
    ensure(elapsed < LABELING_BUDGET, || format!("labeling took {elapsed:?}"))?;

    // cost: a synthetic price list against arithmetic over the run's own records
    let (input_price, output_price) = (3.00, 15.00);
    let costly = priced(config(), input_price, output_price);
    let ceiling = costly.max_cost_per_sample_usd;
    let run = scratch.join("priced");
    let manifest = run_into(&run, costly, &mini_corpus().documents)?;
    let votes: Vec<VoteRecord> = read_jsonl(&run.join(files::VOTES))?;
    let summaries: Vec<SummaryRecord> = read_jsonl(&run.join(files::SUMMARIES))?;
    let usage: TokenUsage = votes
        .iter()
        .flat_map(|v| v.votes.iter().map(|x| x.usage))
        .chain(summaries.iter().map(|s| s.usage_total))
        .sum();
    let hand = usage.input_tokens as f64 * input_price / 1e6 + usage.output_tokens as f64 * output_price / 1e6;
    let cost = &manifest.cost;
    ensure((cost.attributed_cost_usd - hand).abs() < COST_TOL, || {
        format!("attributed ${:.4} vs hand ${hand:.4}", cost.attributed_cost_usd)
    })?;
    let pricing = Pricing {
        input_usd_per_1m: input_price,
        output_usd_per_1m: output_price,
    };
    ensure((estimate_cost(usage, &pricing) - hand).abs() < COST_TOL, || "estimate_cost disagrees with hand arithmetic".into())?;
    let per_sample = hand / cost.labeled_documents as f64;
    ensure((cost.cost_per_sample_usd - per_sample).abs() < COST_TOL, || "per-sample cost mismatch".into())?;
    ensure(cost.ceiling_exceeded == (per_sample > ceiling), || {
        format!("ceiling flag {} at ${per_sample:.6}/sample vs ${ceiling}", cost.ceiling_exceeded)
    })?;
    ensure(cost.ceiling_exceeded, || format!("${per_sample:.6}/sample should exceed ${ceiling}"))?;

    let cheap = scratch.join("cheap");
    let free = run_into(&cheap, priced(config(), 0.01, 0.02), &mini_corpus().documents)?;
    ensure(!free.cost.ceiling_exceeded, || format!("cheap run flagged at ${}/sample", free.cost.cost_per_sample_usd))?;
    Ok(format!(
        "{} documents labeled in {elapsed:.2?}; cost ${:.2} = hand ${hand:.2}; ${per_sample:.5}/sample flagged over ${ceiling}, cheap run not flagged",
        label.counts.input, cost.attributed_cost_usd
    ))
}

// ------------------------------------------------------------------ 10

fn label_fields(value: &serde_json::Value, out: &mut Vec<String>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                if k == "label" || k == "final_label" {
                    if let Some(s) = v.as_str() {
                        out.push(s.to_string());
                    }
                }
                label_fields(v, out);
            }
        }
        serde_json::Value::Array(items) => items.iter().for_each(|v| label_fields(v, out)),
        _ => {}
    }
}

fn taxonomy_compliance(scratch: &Path) -> Outcome {
    let corpus = mini_corpus();
    let mut cfg = config();
    cfg.labelers[0].endpoint = "mock://off-taxonomy/mixed".into();
    cfg.labelers[1].endpoint = "mock://off-taxonomy/محايد نوعا ما".into();
    let dir = scratch.join("off-taxonomy");
    let manifest = run_into(&dir, cfg.clone(), &corpus.documents)?;
    let quarantine: Vec<QuarantineRecord> = read_jsonl(&dir.join(files::QUARANTINE))?;
    let labeled: Vec<LabeledRecord> = read_jsonl(&dir.join(files::LABELED))?;
    let to_label = manifest.stage("label").map(|s| s.counts.input).unwrap_or(0);
    ensure(to_label > 0 && quarantine.len() == to_label, || format!("{} quarantined of {to_label}", quarantine.len()))?;
    ensure(labeled.is_empty(), || format!("{} documents finalized with one valid vote", labeled.len()))?;
    ensure(manifest.terminal.quarantined == to_label && manifest.conserved, || "terminal counts off".into())?;
    let violations: usize = quarantine.iter().map(|q| q.invalid.len()).sum();
    ensure(violations == 2 * to_label, || format!("{violations} violation records for {to_label} documents"))?;
    ensure(
        quarantine.iter().flat_map(|q| &q.invalid).all(|v| v.raw_output == "mixed" || v.raw_output == "محايد نوعا ما"),
        || "violation records lost the raw output".into(),
    )?;

    let mut one_bad = config();
    one_bad.labelers[2].endpoint = "mock://off-taxonomy/6".into();
    let dir_one = scratch.join("one-off-taxonomy");
    let m = run_into(&dir_one, one_bad, &corpus.documents)?;
    ensure(m.terminal.quarantined == 0, || "two valid votes should still decide".into())?;

    let allowed: Vec<&str> = SentimentLabel::ALL.iter().map(|l| l.as_str()).collect();
    let mut seen = Vec::new();
    for d in [&dir, &dir_one] {
        for f in [files::VOTES, files::LABELED, files::QUARANTINE] {
            for v in read_jsonl::<serde_json::Value>(&d.join(f))? {
                label_fields(&v, &mut seen);
            }
        }
    }
    let foreign: Vec<_> = seen.iter().filter(|l| !allowed.contains(&l.as_str())).collect();
    ensure(foreign.is_empty(), || format!("labels outside the taxonomy: {foreign:?}"))?;
    Ok(format!(
        "{to_label} documents quarantined with {violations} violation records; {} label fields scanned, none outside the five classes",
        seen.len()
    ))
}

// ------------------------------------------------------------------ runner

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let elapsed = started.elapsed();
    match result {
        Ok(detail) => {
            println!("PASS [{n:>2}] {name}: {detail} ({elapsed:.2?})");
            true
        }
        Err(detail) => {
            println!("FAIL [{n:>2}] {name}: {detail} ({elapsed:.2?})");
            false
        }
    }
}

fn main() -> ExitCode {
    if let Some(dir) = std::env::var_os(CRASH_DIR_ENV) {
        return crash_child(&PathBuf::from(dir));
    }
    let scratch = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => {
            println!("FAIL cannot create scratch directory: {e}");
            return ExitCode::FAILURE;
        }
    };
    let s = scratch.path();
    let results = [
        run(1, "consensus truth table", consensus_truth_table),
        run(2, "metric oracles", metric_oracles),
        run(3, "class collapse", class_collapse),
        run(4, "entity linking", entity_linking),
        run(5, "routing boundary", routing_boundary),
        run(6, "deduplication", dedup_criterion),
        run(7, "determinism and recovery", || determinism_and_recovery(s)),
        run(8, "extractive mock hallucination", || mock_hallucination(s)),
        run(9, "throughput and cost", || throughput_and_cost(s)),
        run(10, "taxonomy compliance", || taxonomy_compliance(s)),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
