//! `deepsearch` command-line front end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use deepsearch_core::config::EngineConfig;
use deepsearch_core::embed::{EmbeddingProvider, HashEmbedder};
use deepsearch_core::eval::{compute_reward, load_dataset, run_benchmark, FormatMode, MetricsReport, SampleRecord};
use deepsearch_core::extract::LlmExtractor;
use deepsearch_core::planner::PlannerError;
use deepsearch_core::refiner::{format_refined, refine, RefineError, RefinedEvidenceSet, RefinerConfig, SourceAgent};
use deepsearch_core::store::{load_documents, store_exists, LocalStore, RuleExtractor, TripleExtractor};
use deepsearch_core::tools::{local_toolset, planner_toolset, web_toolset};
use deepsearch_core::trajectory::{parse, ToolSet};

const NO_ANSWER: &str = "NO ANSWER";
const EXIT_NO_ANSWER: u8 = 2;

static CANCEL: AtomicBool = AtomicBool::new(false);

#[derive(Parser)]
#[command(name = "deepsearch", version, about = "Hierarchical local + web question answering")]
struct Cli {
    /// Engine config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run generation, embeddings and web against the configured fixtures.
    #[arg(long, global = true)]
    mock: bool,
    /// Store directory, overriding the config.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk a JSONL corpus, build the graph and write the store.
    Ingest {
        corpus: PathBuf,
        /// Overwrite an existing store.
        #[arg(long)]
        force: bool,
        #[arg(long, value_enum, default_value_t = ExtractorKind::Rule)]
        extractor: ExtractorKind,
    },
    /// Rebuild the knowledge graph of an existing store.
    BuildGraph {
        #[arg(long, value_enum, default_value_t = ExtractorKind::Rule)]
        extractor: ExtractorKind,
    },
    /// Answer one question.
    Ask {
        question: String,
        /// Write the full planner trace as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a JSONL dataset and report EM/F1 and search counts.
    Bench {
        dataset: PathBuf,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        /// Aggregate report (JSON).
        #[arg(long, default_value = "metrics.json")]
        output: PathBuf,
        /// Per-sample records as they finish (JSONL). Defaults next to the report.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Score a trajectory file against gold answers.
    Score {
        trajectory: PathBuf,
        /// Gold answer; repeat for several.
        #[arg(long, required = true)]
        gold: Vec<String>,
        /// local, web, planner or a comma-separated tool list.
        #[arg(long, default_value = "local")]
        toolset: String,
        /// Require a think before every tool call and the answer.
        #[arg(long)]
        strict: bool,
    },
    /// Show the evidence the refiner keeps from a trajectory file.
    Refine {
        trajectory: PathBuf,
        #[arg(long, default_value = "local")]
        toolset: String,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        min_per_round: Option<usize>,
        /// Conclusion of the sibling agent, joined into the step-2 target.
        #[arg(long)]
        other_conclusion: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtractorKind {
    /// Pattern-based extraction, no model calls.
    Rule,
    /// Extraction through the configured generation endpoint.
    Llm,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Ingest { corpus, force, extractor } => ingest(&cli, corpus, *force, *extractor),
        Command::BuildGraph { extractor } => build_graph(&cli, *extractor),
        Command::Ask { question, trace } => ask(&cli, question, trace.as_deref()),
        Command::Bench { dataset, concurrency, output, records } => {
            bench(&cli, dataset, *concurrency, output, records.as_deref())
        }
        Command::Score { trajectory, gold, toolset, strict } => score(trajectory, gold, toolset, *strict),
        Command::Refine { trajectory, toolset, alpha, beta, min_per_round, other_conclusion } => {
            let mut cfg = optional_config(&cli)?.refiner;
            cfg.alpha = alpha.unwrap_or(cfg.alpha);
            cfg.beta = beta.unwrap_or(cfg.beta);
            cfg.min_per_round = min_per_round.unwrap_or(cfg.min_per_round);
            refine_cmd(&cli, trajectory, toolset, cfg, other_conclusion.as_deref())
        }
    }
}

/// The config named by `--config`, with `--mock` and `--store` applied.
fn required_config(cli: &Cli) -> Result<EngineConfig> {
    let Some(path) = &cli.config else { bail!("this command needs --config <file>") };
    let mut config = EngineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    apply_overrides(cli, &mut config)?;
    Ok(config)
}

/// Like [`required_config`], but falls back to defaults (hash embedder,
/// default refiner) when no config is given.
fn optional_config(cli: &Cli) -> Result<EngineConfig> {
    if cli.config.is_some() {
        return required_config(cli);
    }
    let mut config = EngineConfig::default();
    if let Some(store) = &cli.store {
        config.store.path = store.clone();
    }
    Ok(config)
}

fn apply_overrides(cli: &Cli, config: &mut EngineConfig) -> Result<()> {
    if let Some(store) = &cli.store {
        config.store.path = std::env::current_dir()?.join(store);
    }
    if cli.mock {
        config.mock = true;
        config.validate().context("--mock")?;
    }
    Ok(())
}

fn extractor(config: &EngineConfig, kind: ExtractorKind) -> Result<Box<dyn TripleExtractor>> {
    Ok(match kind {
        ExtractorKind::Rule => Box::new(RuleExtractor),
        ExtractorKind::Llm => Box::new(LlmExtractor::new(config.build_client()?)),
    })
}

fn print_store_summary(store: &LocalStore, path: &Path) {
    println!("chunks: {}", store.chunks().len());
    println!("triples: {}", store.graph().triples.len());
    println!("entities: {}", store.graph().entities.len());
    println!("store: {}", path.display());
}

fn ingest(cli: &Cli, corpus: &Path, force: bool, kind: ExtractorKind) -> Result<ExitCode> {
    let config = optional_config(cli)?;
    let path = config.store_path();
    if store_exists(&path) && !force {
        bail!("store {} already exists (pass --force to overwrite)", path.display());
    }
    let docs = load_documents(corpus).with_context(|| format!("reading corpus {}", corpus.display()))?;
    let embedder = config.build_embedder()?;
    let mut store = LocalStore::ingest(&docs, config.store.max_chunk_tokens, embedder)?
        .with_resolution_threshold(config.store.resolution_threshold);
    store.build_graph(extractor(&config, kind)?.as_ref())?;
    store.persist(&path)?;
    print_store_summary(&store, &path);
    Ok(ExitCode::SUCCESS)
}

fn build_graph(cli: &Cli, kind: ExtractorKind) -> Result<ExitCode> {
    let config = optional_config(cli)?;
    let path = config.store_path();
    let mut store = config.open_store(config.build_embedder()?)?;
    store.build_graph(extractor(&config, kind)?.as_ref())?;
    store.persist(&path)?;
    print_store_summary(&store, &path);
    Ok(ExitCode::SUCCESS)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn ask(cli: &Cli, question: &str, trace_path: Option<&Path>) -> Result<ExitCode> {
    let config = required_config(cli)?;
    let store = Arc::new(config.open_store(config.build_embedder()?)?);
    let planner = config.build_planner(store)?;
    let (answer, trace) = match planner.answer(question) {
        Ok(ok) => ok,
        Err(PlannerError::ClientFailure { message, trace }) => {
            if let Some(path) = trace_path {
                write_json(path, &trace)?;
                eprintln!("partial trace written to {}", path.display());
            }
            bail!("planner generation failed: {message}");
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(path) = trace_path {
        write_json(path, &trace)?;
    }
    let counts = trace.count_searches();
    println!("{}", answer.as_deref().unwrap_or(NO_ANSWER));
    println!("searches: local={} web={} browse={}", counts.local, counts.web, counts.browse);
    Ok(if answer.is_some() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_NO_ANSWER) })
}

fn bench(cli: &Cli, dataset: &Path, concurrency: usize, output: &Path, records: Option<&Path>) -> Result<ExitCode> {
    let config = required_config(cli)?;
    let (samples, rejected) = load_dataset(dataset)?;
    for r in &rejected {
        eprintln!("{}:{}: rejected: {}", dataset.display(), r.line, r.message);
    }
    let store = Arc::new(config.open_store(config.build_embedder()?)?);
    let planner = config.build_planner(store)?;

    let records_path = records.map(Path::to_path_buf).unwrap_or_else(|| output.with_extension("records.jsonl"));
    let sink = Mutex::new(BufWriter::new(
        File::create(&records_path).with_context(|| format!("creating {}", records_path.display()))?,
    ));
    let on_record = |r: &SampleRecord| {
        let mut w = sink.lock().expect("record sink poisoned");
        let line = serde_json::to_string(r).expect("records serialize");
        if writeln!(w, "{line}").and_then(|_| w.flush()).is_err() {
            log::warn!("could not write record {}", r.id);
        }
    };
    ctrlc::set_handler(|| CANCEL.store(true, Ordering::SeqCst)).context("installing interrupt handler")?;
    let report = run_benchmark(&samples, &planner, concurrency, &CANCEL, &on_record)?;
    write_json(output, &report)?;
    print_report(&report);
    if CANCEL.load(Ordering::SeqCst) {
        eprintln!("interrupted: {} of {} samples recorded", report.samples, samples.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn print_report(r: &MetricsReport) {
    let failed = r.per_sample.iter().filter(|s| s.error.is_some()).count();
    println!("{:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "samples", "failed", "EM", "F1", "local", "web", "browse");
    println!(
        "{:>8} {:>8} {:>8.4} {:>8.4} {:>8.2} {:>8.2} {:>8.2}",
        r.samples, failed, r.em_mean, r.f1_mean, r.avg_local_searches, r.avg_web_searches, r.avg_browses
    );
}

fn toolset(spec: &str) -> Result<ToolSet> {
    Ok(match spec {
        "local" => local_toolset(),
        "web" => web_toolset(),
        "planner" => planner_toolset(),
        list => {
            let names: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            if names.is_empty() {
                bail!("empty toolset");
            }
            ToolSet::new(names)
        }
    })
}

fn read_trajectory(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn score(path: &Path, golds: &[String], toolset_spec: &str, strict: bool) -> Result<ExitCode> {
    let text = read_trajectory(path)?;
    let tools = toolset(toolset_spec)?;
    let mode = if strict { FormatMode::Strict } else { FormatMode::Lenient };
    let report = compute_reward(&text, golds, &tools, mode);
    let f = &report.format;
    println!("format: {}", if f.valid { "valid" } else { "invalid" });
    for v in &f.violations {
        println!("violation: {v}");
    }
    let used: Vec<&str> = f.tool_types_used.iter().map(String::as_str).collect();
    println!("tools used: {} ({}/{})", used.join(", "), used.len(), tools.len());
    println!("prediction: {}", report.prediction);
    println!("gold: {}", report.gold);
    println!("em: {}", report.em);
    println!("f1: {:.6}", report.f1);
    println!("reward: {:.6}", report.reward);
    Ok(if f.valid { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn refine_cmd(cli: &Cli, path: &Path, toolset_spec: &str, cfg: RefinerConfig, other: Option<&str>) -> Result<ExitCode> {
    cfg.validate()?;
    let text = read_trajectory(path)?;
    let tools = toolset(toolset_spec)?;
    let trajectory = parse(&text, &tools).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let embedder: Arc<dyn EmbeddingProvider> = match &cli.config {
        Some(_) => required_config(cli)?.build_embedder()?,
        None => Arc::new(HashEmbedder::default()),
    };
    let set = match refine(&trajectory, other, &cfg, embedder.as_ref()) {
        Ok(set) => set,
        Err(RefineError::NoEvidence) => RefinedEvidenceSet::empty(SourceAgent::of(&trajectory)),
        Err(e) => return Err(e.into()),
    };
    println!("alpha={} beta={} min_per_round={} kept={}", cfg.alpha, cfg.beta, cfg.min_per_round, set.items.len());
    for item in &set.items {
        println!(
            "round {} rank {} {:?} score={:.6}",
            item.evidence.round_index, item.evidence.rank, item.step, item.score
        );
    }
    println!("---");
    println!("{}", format_refined(&[&set]));
    Ok(ExitCode::SUCCESS)
}
