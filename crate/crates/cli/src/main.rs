use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use finsent::corpus::{generate_mini_corpus, load_jsonl, parse_corpus, read_jsonl, CorpusError};
use finsent::metrics::{
    fmt3, markdown_table, render_baseline_table, render_benchmark_table, render_class_table, render_summary_table,
    AgreementReport, BaselineScore,
};
use finsent::pipeline::{
    files, load_truth, ConfigError, Pipeline, PipelineError, RunConfig, RunEvaluation, RunManifest, StageReport, TruthRecord,
    CONSENSUS_MODEL,
};
use finsent::{Document, SentimentLabel};

const EXIT_ERROR_RATE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INTERRUPTED: u8 = 130;

#[derive(Debug, Parser)]
#[command(name = "finsent", version, about = "Consensus-labeled Arabic financial sentiment pipeline")]
struct Cli {
    /// Run config (TOML). Built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace every configured backend with the offline keyword mock.
    #[arg(long, global = true)]
    mock: bool,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    link_threshold: Option<f64>,
    #[arg(long, global = true)]
    route_boundary: Option<usize>,
    /// Run directory holding stage files, checkpoints and the manifest.
    #[arg(long, global = true, default_value = "finsent-out")]
    out: PathBuf,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read a raw corpus (JSONL) into the run directory.
    Ingest {
        /// Corpus file, or `-` for stdin.
        #[arg(long, default_value = "-")]
        input: String,
    },
    Normalize,
    Dedup,
    Link,
    Route,
    Summarize,
    Label,
    Consensus,
    /// Every stage in order.
    Run {
        #[arg(long, default_value = "-")]
        input: String,
    },
    /// Write evaluation.json and the per-summary CSV series.
    Evaluate {
        /// Gold labels, JSONL of {"id", "label"}.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Render report tables as Markdown.
    Report {
        /// 1 summary quality, 2 model benchmark, 3 per-class scores,
        /// 4 baselines, 5 cost-quality ranking, 6 agreement.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
        like_table: Option<u8>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Reference scores for table 4, JSONL of {"model", "accuracy", "macro_f1"}.
        #[arg(long)]
        baselines: Option<PathBuf>,
        /// Model whose per-class scores table 3 shows.
        #[arg(long, default_value = CONSENSUS_MODEL)]
        model: String,
    },
    /// Write the synthetic mini-corpus as JSONL.
    GenCorpus {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        news: usize,
        #[arg(long, default_value_t = 200)]
        social: usize,
        /// Corpus destination; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write the planted labels here.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(ConfigError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Input(_) => EXIT_USAGE,
            CliError::Pipeline(PipelineError::MissingInput { .. } | PipelineError::Setup { .. }) => EXIT_USAGE,
            CliError::Pipeline(PipelineError::Cancelled { .. }) => EXIT_INTERRUPTED,
            CliError::Pipeline(_) | CliError::Io { .. } => 1,
        }
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(CliError::Config)?,
        None => RunConfig::default(),
    };
    if let Some(n) = cli.workers {
        config.workers = n;
    }
    if let Some(t) = cli.link_threshold {
        config.entities.threshold = t;
    }
    if let Some(b) = cli.route_boundary {
        config.route_boundary = b;
    }
    if cli.mock {
        config = config.with_mock_backends();
    }
    config.validate().map_err(CliError::Config)?;
    Ok(config)
}

fn read_corpus(input: &str) -> Result<Vec<Document>, CliError> {
    let result = if input == "-" {
        parse_corpus(io::stdin().lock())
    } else {
        load_jsonl(input)
    };
    result.map_err(|e| match e {
        CorpusError::Io { path, source } if input != "-" => {
            CliError::Input(format!("cannot read corpus {}: {source}", path.display()))
        }
        other => CliError::Input(format!("corpus {input}: {other}")),
    })
}

fn read_input_file<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<Vec<T>, CliError> {
    read_jsonl(path).map_err(|e| CliError::Input(format!("{what} {}: {e}", path.display())))
}

fn open_pipeline(cli: &Cli, cancel: Arc<AtomicBool>) -> Result<Pipeline, CliError> {
    Ok(Pipeline::open(effective_config(cli)?, &cli.out)?.with_cancel_flag(cancel))
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(value).expect("report serializes"));
}

/// Summarizes per-document failures on stderr and picks the exit code.
fn finish(manifest: &RunManifest) -> ExitCode {
    let t = &manifest.terminal;
    if t.errored > 0 {
        eprintln!(
            "{} of {} documents errored ({:.1}%), see {}",
            t.errored,
            t.ingested,
            100.0 * manifest.error_rate,
            files::ERRORS
        );
    }
    if manifest.cost.ceiling_exceeded {
        log::warn!(
            "cost per labeled sample ${:.6} exceeds the ${:.6} ceiling",
            manifest.cost.cost_per_sample_usd,
            manifest.cost.max_cost_per_sample_usd
        );
    }
    if manifest.exceeds_error_threshold() {
        eprintln!(
            "error rate {:.3} exceeds the configured maximum {:.3}",
            manifest.error_rate, manifest.config.max_error_rate
        );
        return ExitCode::from(EXIT_ERROR_RATE);
    }
    ExitCode::SUCCESS
}

fn gen_corpus(seed: u64, news: usize, social: usize, output: Option<&Path>, truth: Option<&Path>) -> Result<(), CliError> {
    let corpus = generate_mini_corpus(seed, news, social);
    let write_lines = |path: Option<&Path>, lines: Vec<String>| -> Result<(), CliError> {
        let io_err = |source| CliError::Io {
            path: path.map(Path::to_path_buf).unwrap_or_else(|| "<stdout>".into()),
            source,
        };
        let mut w: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_err)?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        };
        for line in lines {
            writeln!(w, "{line}").map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    };
    let docs = corpus
        .documents
        .iter()
        .map(|d| {
            serde_json::json!({
                "id": d.id,
                "source": d.source,
                "text": d.text,
                "published_at": d.published_at,
            })
            .to_string()
        })
        .collect();
    write_lines(output, docs)?;
    if let Some(path) = truth {
        let lines = corpus
            .truth
            .iter()
            .map(|(id, label)| {
                serde_json::to_string(&TruthRecord {
                    id: id.clone(),
                    label: *label,
                })
                .expect("truth serializes")
            })
            .collect();
        write_lines(Some(path), lines)?;
    }
    Ok(())
}

fn agreement_table(report: &AgreementReport, items: usize) -> String {
    let opt = |x: Option<f64>| x.map(fmt3).unwrap_or_else(|| "n/a".into());
    let rows = report
        .pairs
        .iter()
        .map(|p| {
            vec![
                format!("{} / {}", p.model_a, p.model_b),
                fmt3(p.kappa.value),
                fmt3(p.js_divergence),
                opt(p.pearson),
                opt(p.chi_square.map(|c| c.statistic)),
                opt(p.chi_square.map(|c| c.p_value)),
            ]
        })
        .collect();
    let mut out = markdown_table(
        &["Pair", "Kappa", &format!("JSD (log{})", report.jsd_log_base), "Pearson", "Chi-Square", "p"],
        rows,
    );
    out.push_str(&format!("\n{items} documents with three valid votes.\n"));
    if let Some(c) = &report.consensus {
        out.push_str(&format!(
            "Consensus over {} documents: full {:.1}%, majority {:.1}%, disagreement {:.1}%.\n",
            c.n, c.full_pct, c.majority_pct, c.disagreement_pct
        ));
    }
    out
}

fn needs_benchmark(evaluation: &RunEvaluation, table: u8) -> Result<(), CliError> {
    if evaluation.benchmark.is_empty() {
        return Err(CliError::Input(format!("table {table} needs gold labels: pass --truth")));
    }
    Ok(())
}

fn render_table(
    table: u8,
    evaluation: &RunEvaluation,
    baselines: &[BaselineScore],
    model: &str,
) -> Result<String, CliError> {
    Ok(match table {
        1 => render_summary_table(&evaluation.summary_quality),
        2 => {
            needs_benchmark(evaluation, 2)?;
            render_benchmark_table(&evaluation.benchmark_pairs())
        }
        3 => {
            needs_benchmark(evaluation, 3)?;
            let entry = evaluation
                .benchmark_for(model)
                .ok_or_else(|| CliError::Input(format!("no benchmark for model `{model}`")))?;
            render_class_table(&entry.report)
        }
        4 => {
            needs_benchmark(evaluation, 4)?;
            render_baseline_table(baselines, &evaluation.benchmark_pairs())
        }
        5 => {
            needs_benchmark(evaluation, 5)?;
            evaluation.cost_quality.as_ref().map(|c| c.to_markdown()).unwrap_or_default()
        }
        _ => match &evaluation.agreement {
            Some(a) => agreement_table(a, evaluation.agreement_items),
            None => "Fewer than two documents carry three valid votes.\n".into(),
        },
    })
}

fn report(
    pipeline: &Pipeline,
    like_table: Option<u8>,
    truth: Option<&BTreeMap<String, SentimentLabel>>,
    baselines: &[BaselineScore],
    model: &str,
) -> Result<(), CliError> {
    let evaluation = pipeline.evaluate(truth)?;
    match like_table {
        Some(n) => print!("{}", render_table(n, &evaluation, baselines, model)?),
        None => {
            let tables: &[(u8, &str)] = if evaluation.benchmark.is_empty() {
                &[(1, "Summary quality"), (6, "Inter-model agreement")]
            } else {
                &[
                    (1, "Summary quality"),
                    (2, "Model benchmark"),
                    (3, "Per-class scores"),
                    (4, "Baselines"),
                    (5, "Cost-quality ranking"),
                    (6, "Inter-model agreement"),
                ]
            };
            for (i, (n, title)) in tables.iter().enumerate() {
                if i > 0 {
                    println!();
                }
                println!("## {title}\n");
                print!("{}", render_table(*n, &evaluation, baselines, model)?);
            }
        }
    }
    Ok(())
}

fn stage(pipeline: &Pipeline, f: impl FnOnce(&Pipeline) -> Result<StageReport, PipelineError>) -> Result<ExitCode, CliError> {
    let report = f(pipeline)?;
    print_json(&report);
    Ok(finish(&pipeline.manifest()?))
}

fn execute(cli: &Cli, cancel: Arc<AtomicBool>) -> Result<ExitCode, CliError> {
    match &cli.command {
        Command::GenCorpus {
            seed,
            news,
            social,
            output,
            truth,
        } => {
            gen_corpus(*seed, *news, *social, output.as_deref(), truth.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Ingest { input } => {
            let docs = read_corpus(input)?;
            stage(&open_pipeline(cli, cancel)?, |p| p.ingest(&docs))
        }
        Command::Normalize => stage(&open_pipeline(cli, cancel)?, Pipeline::normalize),
        Command::Dedup => stage(&open_pipeline(cli, cancel)?, Pipeline::dedup),
        Command::Link => stage(&open_pipeline(cli, cancel)?, Pipeline::link),
        Command::Route => stage(&open_pipeline(cli, cancel)?, Pipeline::route),
        Command::Summarize => stage(&open_pipeline(cli, cancel)?, Pipeline::summarize),
        Command::Label => stage(&open_pipeline(cli, cancel)?, Pipeline::label),
        Command::Consensus => stage(&open_pipeline(cli, cancel)?, Pipeline::consensus),
        Command::Run { input } => {
            let docs = read_corpus(input)?;
            let pipeline = open_pipeline(cli, cancel)?;
            let manifest = pipeline.run(&docs)?;
            print_json(&manifest.terminal);
            Ok(finish(&manifest))
        }
        Command::Evaluate { truth } => {
            let truth = truth.as_deref().map(load_truth_file).transpose()?;
            let pipeline = open_pipeline(cli, cancel)?;
            let evaluation = pipeline.evaluate(truth.as_ref())?;
            pipeline.write_evaluation(&evaluation)?;
            println!("{}", pipeline.path(files::EVALUATION).display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report {
            like_table,
            truth,
            baselines,
            model,
        } => {
            let truth = truth.as_deref().map(load_truth_file).transpose()?;
            let baselines: Vec<BaselineScore> = match baselines {
                Some(path) => read_input_file(path, "baselines")?,
                None => Vec::new(),
            };
            let pipeline = open_pipeline(cli, cancel)?;
            report(&pipeline, *like_table, truth.as_ref(), &baselines, model)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_truth_file(path: &Path) -> Result<BTreeMap<String, SentimentLabel>, CliError> {
    load_truth(path).map_err(|e| CliError::Input(format!("truth {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let cancel = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&cancel);
    if let Err(e) = ctrlc::set_handler(move || {
        if flag.swap(true, Ordering::SeqCst) {
            std::process::exit(i32::from(EXIT_INTERRUPTED));
        }
        eprintln!("interrupt: finishing in-flight documents, press again to abort");
    }) {
        log::warn!("cannot install interrupt handler: {e}");
    }

    match execute(&cli, cancel) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
