mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use clkit_core::dataset::{parse_corpus, ClDataset, DifficultyTier};
use clkit_core::drift::{run_drift, Unrelatedness};
use clkit_core::gateway::GatewayMode;
use clkit_core::memory::{format_context, CharsPerFour, MemoryStore, Query};
use clkit_core::metrics::{evaluate, PerformanceMatrix, RunTimings};
use clkit_core::runner::{emit_all, run_dataset, AgentKind, GraderKind, ReevalPolicy};
use clkit_core::sequence::{build_dataset, compute_stats, Ordering};
use clkit_core::similarity::{pairwise_report, SimilarityMode, SimilaritySource};
use log::info;
use serde_json::{json, Value};

use config::{parse_name, Config};

#[derive(Parser, Debug)]
#[command(name = "clkit", version, about = "Continual-learning evaluation toolkit for software-issue corpora")]
struct Cli {
    /// TOML or JSON config file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build learning sequences from a task corpus.
    Build(BuildArgs),
    /// Print the per-sequence statistics table of a dataset.
    Stats(StatsArgs),
    /// Pairwise similarity of task solutions.
    Similarity(SimilarityArgs),
    /// Prompt-poisoning drift experiment.
    Drift(DriftArgs),
    /// Run the continual-learning protocol and write reports.
    Run(RunArgs),
    /// Compute metrics for a saved performance matrix.
    Metrics(MetricsArgs),
    /// Memory store utilities.
    Memory {
        #[command(subcommand)]
        command: MemoryCommand,
    },
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Corpus as a JSON array or JSON Lines.
    corpus: PathBuf,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    min_tasks: Option<usize>,
    /// Maximum tasks per sequence; 0 keeps every task.
    #[arg(long)]
    max_tasks: Option<usize>,
    #[arg(long, value_parser = parse_name::<Ordering>)]
    ordering: Option<Ordering>,
    #[arg(long)]
    include_test_patch_files: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum TableFormat {
    Markdown,
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct StatsArgs {
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    format: TableFormat,
}

#[derive(Args, Debug)]
struct SimilarityArgs {
    dataset: PathBuf,
    #[arg(long, value_parser = parse_name::<SimilarityMode>, default_value = "jaccard")]
    mode: SimilarityMode,
    #[arg(long, value_parser = parse_name::<SimilaritySource>)]
    source: Option<SimilaritySource>,
    #[arg(long)]
    exclude_diff_headers: bool,
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Directory for `similarity.json`, `histogram.csv` and `strata.csv`.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DriftArgs {
    dataset: PathBuf,
    #[arg(long)]
    n_pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_name::<Unrelatedness>)]
    unrelated: Option<Unrelatedness>,
    /// Restrict to one tier pair, e.g. `easy:hard`. Repeatable.
    #[arg(long = "group", value_parser = parse_group)]
    groups: Vec<(DifficultyTier, DifficultyTier)>,
    #[arg(long, value_parser = parse_name::<GatewayMode>)]
    gateway: Option<GatewayMode>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Dataset JSON; falls back to `run.dataset` in the config.
    dataset: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_name::<AgentKind>)]
    agent: Option<AgentKind>,
    /// Repository to run. Repeatable; default is every sequence.
    #[arg(long = "sequence")]
    sequences: Vec<String>,
    #[arg(long)]
    no_memory: bool,
    #[arg(long)]
    k_memories: Option<usize>,
    #[arg(long, value_parser = parse_name::<ReevalPolicy>)]
    reeval: Option<ReevalPolicy>,
    /// External pass/fail results; switches the grader to ingestion.
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_name::<GatewayMode>)]
    gateway: Option<GatewayMode>,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Matrix as `.json` or `.csv`.
    matrix: PathBuf,
    /// `timings.json` written by `run`, for TUE.
    #[arg(long)]
    timings: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: TableFormat,
}

#[derive(Subcommand, Debug)]
enum MemoryCommand {
    /// Summarize a memory snapshot, optionally running a query against it.
    Inspect {
        path: PathBuf,
        /// Query text, embedded with the configured gateway.
        #[arg(long)]
        query: Option<String>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Sequence treated as current for retrieval priority.
        #[arg(long, default_value = "")]
        sequence: String,
        #[arg(long, default_value_t = 2048)]
        max_tokens: usize,
    },
}

fn parse_group(s: &str) -> Result<(DifficultyTier, DifficultyTier)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("expected `src:tgt`, got `{s}`"))?;
    let tier = |t: &str| clkit_core::dataset::difficulty_from_annotation(t).map_err(anyhow::Error::from);
    Ok((tier(a)?, tier(b)?))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => {
            write(p, contents)?;
            info!("wrote {}", p.display());
            Ok(())
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn load_dataset(path: &Path) -> Result<ClDataset> {
    let ds = ClDataset::from_json(&read(path)?).with_context(|| format!("loading dataset {}", path.display()))?;
    ds.validate()?;
    Ok(ds)
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn cmd_build(cfg: &Config, args: &BuildArgs) -> Result<()> {
    let mut b = cfg.build.clone();
    if let Some(n) = args.min_tasks {
        b.min_tasks_per_repo = n;
    }
    if let Some(n) = args.max_tasks {
        b.max_tasks_per_sequence = (n > 0).then_some(n);
    }
    if let Some(o) = args.ordering {
        b.ordering = o;
    }
    b.include_test_patch_files |= args.include_test_patch_files;
    let records = parse_corpus(&read(&args.corpus)?)?;
    info!("read {} records", records.len());
    let ds = build_dataset(&records, &b)?;
    info!("built {} sequences, {} tasks", ds.sequences.len(), ds.task_count());
    emit(args.out.as_deref(), &ds.to_json())
}

fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let stats = compute_stats(&load_dataset(&args.dataset)?);
    let text = match args.format {
        TableFormat::Markdown => stats.to_markdown(),
        TableFormat::Csv => stats.to_csv(),
        TableFormat::Json => pretty(&stats),
    };
    print!("{text}");
    Ok(())
}

fn cmd_similarity(cfg: &Config, args: &SimilarityArgs) -> Result<()> {
    let mut opts = cfg.similarity.clone();
    if let Some(s) = args.source {
        opts.source = s;
    }
    opts.exclude_diff_headers |= args.exclude_diff_headers;
    if let Some(w) = args.bin_width {
        if !(w > 0.0 && w <= 1.0) {
            bail!("--bin-width must be in (0, 1]");
        }
        opts.bin_width = w;
    }
    if let Some(k) = args.top_k {
        opts.top_k = k;
    }
    let ds = load_dataset(&args.dataset)?;
    let report = pairwise_report(&ds, args.mode, &opts);
    if let Some(dir) = &args.out {
        write(&dir.join("similarity.json"), &pretty(&report))?;
        write(&dir.join("histogram.csv"), &report.histogram_csv())?;
        write(&dir.join("strata.csv"), &report.strata_csv())?;
        info!("wrote similarity reports to {}", dir.display());
    }
    println!("pairs: {}", report.pair_count);
    println!("mean: {:.4}", report.mean);
    for s in &report.stratified {
        println!("{} / {}: {:.4} ({} pairs)", s.tier_a.name(), s.tier_b.name(), s.mean, s.pairs);
    }
    if !report.zero_vector_tasks.is_empty() {
        println!("zero-vector tasks: {}", report.zero_vector_tasks.join(", "));
    }
    Ok(())
}

fn cmd_drift(cfg: &Config, args: &DriftArgs) -> Result<()> {
    let mut d = cfg.drift.clone();
    if let Some(n) = args.n_pairs {
        d.n_pairs = n;
    }
    if let Some(s) = args.seed {
        d.seed = s;
    }
    if let Some(u) = args.unrelated {
        d.unrelated = u;
    }
    if !args.groups.is_empty() {
        d.groups = args.groups.clone();
    }
    let mut gateway = cfg.gateway().clone();
    if let Some(m) = args.gateway {
        gateway.mode = m;
    }
    let ds = load_dataset(&args.dataset)?;
    let chat = gateway.chat_model()?;
    let embedder = gateway.embedder()?;
    let params = clkit_core::gateway::GenerationParams {
        seed: Some(d.seed),
        ..gateway.generation_params()
    };
    let run = run_drift(&ds, &d, chat.as_ref(), embedder.as_ref(), &params, gateway.max_in_flight)?;
    if let Some(dir) = &args.out {
        write(&dir.join("drift.json"), &pretty(&run))?;
        write(&dir.join("drift.csv"), &run.report.to_csv())?;
        info!("wrote drift reports to {}", dir.display());
    }
    for w in &run.report.warnings {
        log::warn!("{w}");
    }
    print!("{}", run.report.to_csv());
    Ok(())
}

fn cmd_run(cfg: &Config, args: &RunArgs) -> Result<()> {
    let mut r = cfg.run.clone();
    if let Some(p) = &args.dataset {
        r.dataset = Some(p.clone());
    }
    if let Some(p) = &args.out {
        r.output_dir = Some(p.clone());
    }
    if let Some(a) = args.agent {
        r.agent = a;
    }
    if !args.sequences.is_empty() {
        r.sequences = args.sequences.clone();
    }
    if args.no_memory {
        r.memory_enabled = false;
    }
    if let Some(k) = args.k_memories {
        r.k_memories = k;
    }
    if let Some(p) = args.reeval {
        r.reeval_policy = p;
    }
    if let Some(p) = &args.results {
        r.grader.kind = GraderKind::IngestResults;
        r.grader.results_path = Some(p.clone());
    }
    if let Some(s) = args.seed {
        r.seed = s;
    }
    if let Some(m) = args.gateway {
        r.gateway.mode = m;
    }
    let dataset_path = r.dataset.clone().ok_or_else(|| anyhow!("no dataset given (argument or run.dataset)"))?;
    let out = r.output_dir.clone().ok_or_else(|| anyhow!("no output directory given (--out or run.output_dir)"))?;
    let ds = load_dataset(&dataset_path)?;
    let runs = run_dataset(&ds, &r)?;
    let files = emit_all(&runs, &r, &out)?;
    info!("wrote {} files under {}", files.len(), out.display());
    for run in &runs {
        let m = evaluate(&run.matrix, Some(&run.timings), &r.weights)?;
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "{}: ACC {} F {} FT {} BWT {} CL-Score {}",
            run.repo,
            fmt(m.acc),
            fmt(m.f),
            fmt(m.ft),
            fmt(m.bwt),
            fmt(m.cl_score)
        );
    }
    Ok(())
}

/// Accepts the bare matrix file or the report form with a provenance header.
fn load_matrix(path: &Path) -> Result<PerformanceMatrix> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "csv") {
        return Ok(PerformanceMatrix::from_csv(&text)?);
    }
    let mut v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("provenance");
    }
    let file = serde_json::from_value(v).with_context(|| format!("reading matrix {}", path.display()))?;
    Ok(PerformanceMatrix::from_file(&file)?)
}

fn cmd_metrics(cfg: &Config, args: &MetricsArgs) -> Result<()> {
    let mut w = cfg.weights();
    if let Some(b) = args.beta {
        w.beta = b;
    }
    let m = load_matrix(&args.matrix)?;
    let timings: Option<RunTimings> = match &args.timings {
        Some(p) => Some(serde_json::from_str(&read(p)?).with_context(|| format!("reading timings {}", p.display()))?),
        None => None,
    };
    let report = evaluate(&m, timings.as_ref(), &w)?;
    match args.format {
        TableFormat::Markdown => print!("{}", report.to_markdown()),
        TableFormat::Json => print!("{}", pretty(&report)),
        TableFormat::Csv => {
            let rows: BTreeMap<&str, Option<f64>> = BTreeMap::from([
                ("ACC", report.acc),
                ("AULC", report.aulc),
                ("BWT", report.bwt),
                ("CL-F1", report.cl_f1),
                ("CL-Fbeta", report.cl_f_beta),
                ("CL-P", report.cl_p),
                ("CL-S", report.cl_s),
                ("CL-Score", report.cl_score),
                ("F", report.f),
                ("FT", report.ft),
                ("SR", report.sr_mean),
                ("TUE", report.tue),
            ]);
            println!("metric,value");
            for (k, v) in rows {
                println!("{k},{}", v.map(|v| v.to_string()).unwrap_or_default());
            }
        }
    }
    for a in &report.absent {
        log::warn!("{} absent: {}", a.metric, a.reason);
    }
    Ok(())
}

/// Accepts a raw store file or the `{provenance, store}` snapshot from `run`.
fn load_store(path: &Path) -> Result<MemoryStore> {
    let text = read(path)?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let inner = match v.get("store") {
        Some(s) => s.to_string(),
        None => text,
    };
    Ok(MemoryStore::from_json(&inner)?)
}

fn cmd_memory_inspect(
    cfg: &Config,
    path: &Path,
    query: Option<&str>,
    k: usize,
    sequence: &str,
    max_tokens: usize,
) -> Result<()> {
    let store = load_store(path)?;
    let mut per_seq: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in store.records() {
        let e = per_seq.entry(r.sequence_id.as_str()).or_default();
        e.0 += 1;
        e.1 += usize::from(r.success);
    }
    let summary = json!({
        "dimension": store.dimension(),
        "records": store.len(),
        "config": store.config(),
        "sequences": per_seq
            .iter()
            .map(|(s, (n, ok))| json!({"sequence": s, "records": n, "successes": ok}))
            .collect::<Vec<_>>(),
    });
    print!("{}", pretty(&summary));
    if let Some(text) = query {
        let mut gateway = cfg.gateway().clone();
        gateway.embedding_dimension = store.dimension();
        let embedding = gateway.embedder()?.embed(text)?.vector;
        let hits = store.retrieve(&Query {
            embedding: &embedding,
            k,
            current_sequence: sequence,
            exclude_task: None,
        })?;
        print!("{}", format_context(&hits, max_tokens, &CharsPerFour));
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = Config::load_or_default(cli.config.as_deref())?;
    match &cli.command {
        Command::Build(a) => cmd_build(&cfg, a),
        Command::Stats(a) => cmd_stats(a),
        Command::Similarity(a) => cmd_similarity(&cfg, a),
        Command::Drift(a) => cmd_drift(&cfg, a),
        Command::Run(a) => cmd_run(&cfg, a),
        Command::Metrics(a) => cmd_metrics(&cfg, a),
        Command::Memory {
            command:
                MemoryCommand::Inspect {
                    path,
                    query,
                    k,
                    sequence,
                    max_tokens,
                },
        } => cmd_memory_inspect(&cfg, path, query.as_deref(), *k, sequence, *max_tokens),
    }
}
