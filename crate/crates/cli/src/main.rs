//! `factcheck` command-line driver.
//!
//! Exit codes: 0 success, 2 data errors, 3 backend or build errors,
//! 4 evaluation mismatches, 64 usage or configuration errors.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use factcheck::agents::{ChatBackend, DecodingParams, HttpChatBackend, ScriptedBackend, Transcript};
use factcheck::corpus::{
    finfact_to_canonical, load_annotations, load_dataset, load_finfact_raw, map_external_label,
    parse_date, sanitize_finfact, save_dataset, ClaimRecord, CorpusError, DownloadReport, FormatTag,
    Modality,
};
use factcheck::embed_index::{build_index, IndexError};
use factcheck::embedder::{Embedder, HttpEmbedder, ScriptedEmbedder};
use factcheck::evalkit::{
    category_necessity_table, chi_square_independence, emit_report, gold_map, mann_whitney_u,
    necessity_alpha, oracle_compose, score, summarize_groups, Comparison, EvalError, ReportOptions,
    RunResult,
};
use factcheck::pipeline::{
    load_predictions, run_dataset, Agent, AgentSet, PipelineError, Retrieval, Retriever, RunContext,
    RunOptions, ThresholdScorer,
};
use factcheck::webfc::{
    emit_webfc, Fetcher, HttpFetcher, HttpSearch, ScriptedFetcher, ScriptedSearch, SearchBackend,
    WebError, WebFcBuilder,
};
use factcheck::Index;
use serde::Deserialize;
use tracing::info;

use config::{BackendEntry, BackendKind, RunConfig};

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Backend(String),
    Eval(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 64,
            Failure::Data(_) => 2,
            Failure::Backend(_) => 3,
            Failure::Eval(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Backend(m) | Failure::Eval(m) => m,
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<IndexError> for Failure {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Io { .. } | IndexError::Format { .. } => Failure::Data(e.to_string()),
            _ => Failure::Backend(e.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::MissingBackend { .. } | PipelineError::NothingToRun => {
                Failure::Usage(e.to_string())
            }
            PipelineError::Io { .. } => Failure::Data(e.to_string()),
            _ => Failure::Backend(e.to_string()),
        }
    }
}

impl From<WebError> for Failure {
    fn from(e: WebError) -> Self {
        match e {
            WebError::Corpus(c) => c.into(),
            WebError::Io { .. } => Failure::Data(e.to_string()),
            _ => Failure::Backend(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io { .. } => Failure::Data(e.to_string()),
            _ => Failure::Eval(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

#[derive(Debug, Clone, PartialEq, Eq)]
enum TranscriptMode {
    Record,
    Replay(PathBuf),
}

fn parse_transcript_mode(s: &str) -> Result<TranscriptMode, String> {
    match s {
        "record" => Ok(TranscriptMode::Record),
        _ => match s.strip_prefix("replay:") {
            Some(p) if !p.is_empty() => Ok(TranscriptMode::Replay(PathBuf::from(p))),
            _ => Err("expected `record` or `replay:<path>`".into()),
        },
    }
}

#[derive(Parser, Debug)]
#[command(name = "factcheck", version, about = "Multimodal claim verification toolkit")]
struct Cli {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// Abort on the first per-claim failure.
    #[arg(long, global = true)]
    strict: bool,
    /// `record` saves the transcript; `replay:<path>` answers every chat request from it.
    #[arg(long, global = true, value_parser = parse_transcript_mode)]
    transcript: Option<TranscriptMode>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a source dataset to the canonical schema.
    Convert(ConvertArgs),
    /// Embed a dataset's evidence of one modality into an index file.
    Index(IndexArgs),
    /// Run strategies over a dataset.
    Run(RunArgs),
    /// Build a web evidence dataset from seed claims.
    Webfc(WebfcArgs),
    /// Score prediction files.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Mocheg,
    Finfact,
    Webfc,
}

impl From<FormatArg> for FormatTag {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Mocheg => FormatTag::Mocheg,
            FormatArg::Finfact => FormatTag::Finfact,
            FormatArg::Webfc => FormatTag::Webfc,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModalityArg {
    Text,
    Image,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    /// Source directory. For finfact it holds `finfact.jsonl` and `downloads.jsonl`.
    #[arg(long)]
    src: PathBuf,
    #[arg(long, value_enum)]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct IndexArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    modality: ModalityArg,
    /// Backend entry to embed with; defaults to `embedder_<modality>`.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Comma-separated strategy names.
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<String>,
    /// Comma-separated evidence configurations.
    #[arg(long, value_delimiter = ',')]
    configs: Vec<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WebfcArgs {
    /// JSONL of `{claim_id, text, gold_verdict, factcheck_date}`.
    #[arg(long)]
    seeds: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Prediction files to score.
    predictions: Vec<PathBuf>,
    /// Canonical dataset holding the gold verdicts.
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mocheg")]
    format: FormatArg,
    /// Compose the oracle from these runs; the first is the fallback.
    #[arg(long, num_args = 1..)]
    oracle: Vec<PathBuf>,
    /// Annotation file; reports Krippendorff's alpha and the category test.
    #[arg(long)]
    agreement: Option<PathBuf>,
    /// Also write plottable confusion counts.
    #[arg(long)]
    plot_data: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose {
        tracing::Level::INFO
    } else {
        tracing::Level::WARN
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    if let Some(p) = cli.parallelism {
        if p == 0 {
            return Err(Failure::Usage("--parallelism must be at least 1".into()));
        }
        cfg.parallelism = Some(p);
    }
    cfg.strict |= cli.strict;
    let ctx = Ctx {
        cfg,
        transcript: cli.transcript,
    };
    match cli.command {
        Command::Convert(a) => cmd_convert(&ctx, a),
        Command::Index(a) => cmd_index(&ctx, a),
        Command::Run(a) => cmd_run(ctx, a),
        Command::Webfc(a) => cmd_webfc(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
    }
}

struct Ctx {
    cfg: RunConfig,
    transcript: Option<TranscriptMode>,
}

impl Ctx {
    fn out_dir(&self) -> Result<PathBuf, Failure> {
        self.cfg
            .out
            .clone()
            .ok_or_else(|| Failure::Usage("no output directory (--out or `out` in config)".into()))
    }

    fn parallelism(&self) -> usize {
        self.cfg.parallelism.unwrap_or(4)
    }

    fn format(&self) -> FormatTag {
        self.cfg.format.unwrap_or(FormatTag::Mocheg)
    }

    /// Entries replayed by scripted chat backends.
    fn replay_entries(&self, entry: &BackendEntry) -> Result<Vec<factcheck::agents::TranscriptEntry>, Failure> {
        let paths: Vec<PathBuf> = match (&self.transcript, &entry.transcript) {
            (Some(TranscriptMode::Replay(p)), _) => vec![p.clone()],
            (_, Some(p)) => vec![p.clone()],
            _ => self.cfg.transcripts.clone(),
        };
        if paths.is_empty() {
            return Err(Failure::Usage(format!(
                "scripted backend {} has no transcript to replay",
                entry.display_name("?")
            )));
        }
        let mut out = Vec::new();
        for p in paths {
            out.extend(
                Transcript::load_entries(&p)
                    .map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
            );
        }
        Ok(out)
    }

    fn transcript_refs(&self, entry: Option<&BackendEntry>) -> Vec<String> {
        let mut refs: Vec<String> = match (&self.transcript, entry.and_then(|e| e.transcript.as_ref())) {
            (Some(TranscriptMode::Replay(p)), _) => vec![p.display().to_string()],
            (_, Some(p)) => vec![p.display().to_string()],
            _ => self.cfg.transcripts.iter().map(|p| p.display().to_string()).collect(),
        };
        refs.dedup();
        refs
    }

    fn chat_backend(&self, role: &str, entry: &BackendEntry) -> Result<Agent, Failure> {
        let decoding = entry.decoding.clone().unwrap_or_else(DecodingParams::greedy);
        let name = entry.display_name(role);
        let replay = matches!(self.transcript, Some(TranscriptMode::Replay(_)));
        let backend: Arc<dyn ChatBackend> = if replay || entry.kind == BackendKind::Scripted {
            Arc::new(ScriptedBackend::new(name, entry.model(), self.replay_entries(entry)?))
        } else {
            let url = entry
                .base_url
                .as_deref()
                .ok_or_else(|| Failure::Usage(format!("backend `{role}` has no base_url")))?;
            Arc::new(HttpChatBackend::new(
                name,
                url,
                entry.model(),
                secret(entry)?,
                timeout(entry.timeout_s, 120.0),
            ))
        };
        Ok(Agent::new(backend, decoding))
    }

    fn embedder(&self, role: &str, entry: &BackendEntry) -> Result<Arc<dyn Embedder>, Failure> {
        let name = entry.display_name(role);
        match entry.kind {
            BackendKind::Scripted => {
                let path = entry
                    .vectors
                    .as_deref()
                    .ok_or_else(|| Failure::Usage(format!("scripted embedder `{role}` has no `vectors` file")))?;
                let e = ScriptedEmbedder::load(name, path).map_err(|e| Failure::Data(e.to_string()))?;
                Ok(Arc::new(e))
            }
            BackendKind::Http => {
                let url = entry
                    .base_url
                    .clone()
                    .ok_or_else(|| Failure::Usage(format!("backend `{role}` has no base_url")))?;
                Ok(Arc::new(HttpEmbedder::new(name, url, secret(entry)?, timeout(entry.timeout_s, 60.0))))
            }
        }
    }
}

fn timeout(secs: Option<f64>, default: f64) -> Duration {
    Duration::from_secs_f64(secs.unwrap_or(default).max(0.001))
}

fn secret(entry: &BackendEntry) -> Result<Option<String>, Failure> {
    match &entry.auth_env_var {
        None => Ok(None),
        Some(var) => std::env::var(var)
            .map(Some)
            .map_err(|_| Failure::Usage(format!("environment variable {var} is not set"))),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    let mut body = serde_json::to_string_pretty(value).expect("serializable");
    body.push('\n');
    fs::write(path, body).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn cmd_convert(ctx: &Ctx, a: ConvertArgs) -> Outcome {
    let out = ctx.out_dir()?;
    let format: FormatTag = a.format.into();
    let mut report = serde_json::Map::new();
    report.insert("format".into(), format.as_str().into());
    match format {
        FormatTag::Finfact => {
            let raw = load_finfact_raw(&a.src.join("finfact.jsonl"))?;
            let downloads = DownloadReport::load(&a.src.join("downloads.jsonl"))?;
            let kept = sanitize_finfact(&raw, &downloads);
            let (claims, ks) = finfact_to_canonical(&kept, &downloads, &a.src)?;
            save_dataset(&out, &claims, &ks)?;
            report.insert("raw_records".into(), raw.len().into());
            report.insert("dropped_by_sanitization".into(), (raw.len() - kept.len()).into());
        }
        _ => {
            let ds = load_dataset(&a.src, format)?;
            save_dataset(&out, &ds.claims, &ds.knowledge)?;
        }
    }
    let reloaded = load_dataset(&out, format)?;
    report.insert(
        "validation".into(),
        serde_json::to_value(&reloaded.report).expect("serializable"),
    );
    write_json(&out.join("validation_report.json"), &report)?;
    println!("{}", serde_json::to_string(&report).expect("serializable"));
    Ok(())
}

fn cmd_index(ctx: &Ctx, a: IndexArgs) -> Outcome {
    let out = ctx.out_dir()?;
    let dataset = a
        .dataset
        .or_else(|| ctx.cfg.dataset.clone())
        .ok_or_else(|| Failure::Usage("no dataset (--dataset or `dataset` in config)".into()))?;
    let format = a.format.map(FormatTag::from).unwrap_or(ctx.format());
    let (modality, default_role) = match a.modality {
        ModalityArg::Text => (Modality::Text, "embedder_text"),
        ModalityArg::Image => (Modality::Image, "embedder_image"),
    };
    let role = a.backend.unwrap_or_else(|| default_role.to_string());
    let b = &ctx.cfg.backends;
    let entry = match role.as_str() {
        "embedder_text" => b.embedder_text.as_ref(),
        "embedder_image" => b.embedder_image.as_ref(),
        _ => return Err(Failure::Usage(format!("unknown embedder backend `{role}`"))),
    }
    .ok_or_else(|| Failure::Usage(format!("missing backend `{role}`")))?;
    let embedder = ctx.embedder(&role, entry)?;
    let ds = load_dataset(&dataset, format)?;
    let items: Vec<_> = match modality {
        Modality::Text => ds.knowledge.text_items().collect(),
        Modality::Image => ds.knowledge.image_items().collect(),
    };
    let index: Index = build_index(items, &ds.knowledge, embedder.as_ref())?;
    fs::create_dir_all(&out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    let path = out.join(format!("index_{}.jsonl", modality.as_str()));
    index.save(&path)?;
    println!("{} entries, dim {} -> {}", index.len(), index.dim(), path.display());
    Ok(())
}

fn load_index(path: &Path) -> Result<Arc<Index>, Failure> {
    Ok(Arc::new(Index::load(path)?))
}

fn cmd_run(mut ctx: Ctx, a: RunArgs) -> Outcome {
    if !a.strategies.is_empty() {
        ctx.cfg.strategies = a.strategies;
    }
    if !a.configs.is_empty() {
        ctx.cfg.configs = a.configs;
    }
    if a.tau.is_some() {
        ctx.cfg.tau = a.tau;
    }
    if a.dataset.is_some() {
        ctx.cfg.dataset = a.dataset;
    }
    let (strategies, configs) = ctx.cfg.validate_run().map_err(Failure::Usage)?;
    let out = ctx.out_dir()?;
    let cfg = &ctx.cfg;
    let b = &cfg.backends;

    let verifier_entry = b.verifier.as_ref().expect("validated");
    let mut agents = AgentSet::new(ctx.chat_backend("verifier", verifier_entry)?);
    let mut tags = BTreeMap::new();
    tags.insert("verifier".to_string(), tag(verifier_entry, "verifier"));
    let mut refs = ctx.transcript_refs(Some(verifier_entry));
    if strategies.iter().any(|s| s.needs_analyzer()) {
        let e = b.analyzer.as_ref().expect("validated");
        agents = agents.with_analyzer(ctx.chat_backend("analyzer", e)?);
        tags.insert("analyzer".into(), tag(e, "analyzer"));
        refs.extend(ctx.transcript_refs(Some(e)));
    }

    let ds = load_dataset(cfg.dataset.as_ref().expect("validated"), ctx.format())?;
    let image_index = cfg.image_index.as_deref().map(load_index).transpose()?;
    let text_index = cfg.text_index.as_deref().map(load_index).transpose()?;
    let mut retrieval = Retrieval::gold_only(Arc::new(ds.knowledge));
    if let (Some(index), Some(e)) = (text_index, b.embedder_text.as_ref()) {
        retrieval.text = Some(Retriever {
            index,
            query_embedder: ctx.embedder("embedder_text", e)?,
        });
        tags.insert("embedder_text".into(), tag(e, "embedder_text"));
    }
    if let Some(e) = b.embedder_image.as_ref() {
        let embedder = ctx.embedder("embedder_image", e)?;
        tags.insert("embedder_image".into(), tag(e, "embedder_image"));
        if let Some(index) = &image_index {
            retrieval.image = Some(Retriever {
                index: index.clone(),
                query_embedder: embedder.clone(),
            });
        }
        if strategies.iter().any(|s| s.needs_threshold_scorer()) {
            agents = agents.with_threshold(ThresholdScorer {
                embedder,
                image_index: image_index.clone(),
            });
        }
    }
    refs.sort();
    refs.dedup();

    let transcript = Transcript::default();
    let opts = RunOptions {
        out_dir: out.clone(),
        parallelism: ctx.parallelism(),
        strict: cfg.strict,
    };
    let record_path = out.join("transcript.jsonl");
    if ctx.transcript == Some(TranscriptMode::Record) {
        refs.push(record_path.display().to_string());
    }
    let run_ctx = RunContext {
        config: serde_json::to_value(cfg).expect("serializable"),
        backend_tags: tags,
        transcript_refs: refs,
    };
    let manifest = run_dataset(&ds.claims, &configs, &strategies, &agents, &retrieval, &transcript, &opts, run_ctx)?;
    if ctx.transcript == Some(TranscriptMode::Record) {
        transcript
            .save(&record_path)
            .map_err(|e| Failure::Data(format!("{}: {e}", record_path.display())))?;
    }
    for r in &manifest.runs {
        println!(
            "{}: n={} fallback={} error={} per_sample_ms={:.1}",
            r.file, r.n, r.n_fallback, r.n_error, r.per_sample_ms
        );
    }
    Ok(())
}

fn tag(e: &BackendEntry, role: &str) -> String {
    format!("{}/{}", e.display_name(role), e.model())
}

#[derive(Deserialize)]
struct Seed {
    claim_id: String,
    text: String,
    gold_verdict: String,
    #[serde(default)]
    factcheck_date: Option<String>,
}

fn load_seeds(path: &Path) -> Result<Vec<ClaimRecord>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let s: Seed = serde_json::from_str(line)
            .map_err(|e| Failure::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(ClaimRecord {
            gold_verdict: map_external_label(&s.gold_verdict, FormatTag::Webfc)?,
            claim_id: s.claim_id,
            text: s.text,
            gold_text_evidence: Vec::new(),
            gold_image_evidence: Vec::new(),
            source: FormatTag::Webfc.as_str().into(),
            factcheck_date: s.factcheck_date.as_deref().and_then(parse_date),
        });
    }
    Ok(out)
}

fn cmd_webfc(ctx: &Ctx, a: WebfcArgs) -> Outcome {
    let out = ctx.out_dir()?;
    let seeds = load_seeds(&a.seeds)?;
    let web = ctx
        .cfg
        .webfc
        .clone()
        .ok_or_else(|| Failure::Usage("missing [webfc] section".into()))?;
    let entry = ctx
        .cfg
        .backends
        .summarizer
        .as_ref()
        .ok_or_else(|| Failure::Usage("missing backend `summarizer`".into()))?;
    let summarizer = ctx.chat_backend("summarizer", entry)?;
    let search: Box<dyn SearchBackend> = match web.search.kind {
        BackendKind::Scripted => {
            let f = web.search.fixture.as_deref().ok_or_else(|| Failure::Usage("scripted search needs `fixture`".into()))?;
            Box::new(ScriptedSearch::load(f)?)
        }
        BackendKind::Http => {
            let url = web.search.url.clone().ok_or_else(|| Failure::Usage("search needs `url`".into()))?;
            let auth = match &web.search.auth_env_var {
                Some(v) => Some(std::env::var(v).map_err(|_| Failure::Usage(format!("environment variable {v} is not set")))?),
                None => None,
            };
            Box::new(HttpSearch::new(url, auth, Duration::from_secs(30)))
        }
    };
    let fetcher: Box<dyn Fetcher> = match web.fetch.kind {
        BackendKind::Scripted => {
            let f = web.fetch.fixture.as_deref().ok_or_else(|| Failure::Usage("scripted fetch needs `fixture`".into()))?;
            Box::new(ScriptedFetcher::load(f)?)
        }
        BackendKind::Http => Box::new(HttpFetcher::new(
            timeout(web.fetch.timeout_s, 20.0),
            web.fetch.max_per_host,
            Duration::from_millis(web.fetch.delay_ms),
        )),
    };
    let builder = WebFcBuilder {
        search: search.as_ref(),
        fetcher: fetcher.as_ref(),
        summarizer,
        parallelism: ctx.parallelism(),
    };
    let transcript = Transcript::default();
    let builds = builder.build(&seeds, &transcript);
    let report = emit_webfc(&builds, &out)?;
    if ctx.transcript == Some(TranscriptMode::Record) {
        let p = out.join("transcript.jsonl");
        transcript.save(&p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
    }
    info!(admitted = report.admitted, rejected = report.rejected, "webfc build finished");
    println!(
        "admitted={} rejected={} undated_dropped={} failed_fetches={}",
        report.admitted, report.rejected, report.undated_dropped, report.failed_fetches
    );
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<factcheck::pipeline::Prediction>, Failure> {
    load_predictions(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> Outcome {
    let out = ctx.out_dir()?;
    if a.predictions.is_empty() && a.oracle.is_empty() && a.agreement.is_none() {
        return Err(Failure::Usage("nothing to evaluate".into()));
    }
    let gold = if a.predictions.is_empty() && a.oracle.is_empty() {
        Default::default()
    } else {
        let dir = a
            .gold
            .as_deref()
            .ok_or_else(|| Failure::Usage("scoring predictions needs --gold".into()))?;
        gold_map(&load_dataset(dir, a.format.into())?.claims)
    };

    let mut runs = Vec::new();
    for path in &a.predictions {
        let preds = read_predictions(path)?;
        let (confusion, report) = score(&preds, &gold)?;
        let first = preds.first();
        runs.push(RunResult {
            name: stem(path),
            strategy: first.map(|p| p.strategy.clone()).unwrap_or_default(),
            config: first.map(|p| p.config.clone()).unwrap_or_default(),
            confusion,
            report,
        });
    }
    if !a.oracle.is_empty() {
        let components = a.oracle.iter().map(|p| read_predictions(p)).collect::<Result<Vec<_>, _>>()?;
        let (composed, confusion, report) = oracle_compose(&components, &gold)?;
        let strategy = composed.first().map(|p| p.strategy.clone()).unwrap_or_default();
        let dir = out.join(format!("oracle__{strategy}"));
        fs::create_dir_all(&dir).map_err(|e| Failure::Data(e.to_string()))?;
        let body: String = composed
            .iter()
            .map(|p| serde_json::to_string(p).expect("serializable") + "\n")
            .collect();
        fs::write(dir.join("predictions.jsonl"), body).map_err(|e| Failure::Data(e.to_string()))?;
        runs.push(RunResult {
            name: format!("oracle__{strategy}"),
            strategy,
            config: "oracle".into(),
            confusion,
            report,
        });
    }

    let comparisons = group_tests(&runs)?;
    if !runs.is_empty() {
        emit_report(&out, &runs, &comparisons, ReportOptions { plot_data: a.plot_data })?;
        for r in &runs {
            println!(
                "{}: accuracy={:.3} macro_f1={:.3} n={}",
                r.name, r.report.accuracy, r.report.macro_f1, r.report.n
            );
        }
    }

    if let Some(path) = &a.agreement {
        let records = load_annotations(path)?;
        let alpha = necessity_alpha(&records)?;
        let mut summary = serde_json::Map::new();
        summary.insert("krippendorff_alpha".into(), alpha.into());
        let first = records.iter().map(|r| r.annotator_id.as_str()).min().unwrap_or_default();
        let table = category_necessity_table(&records, first);
        summary.insert("category_table_annotator".into(), first.into());
        summary.insert("category_table".into(), serde_json::to_value(table).expect("serializable"));
        if let Ok(c) = chi_square_independence(table) {
            summary.insert("chi_square".into(), serde_json::to_value(c).expect("serializable"));
        }
        fs::create_dir_all(&out).map_err(|e| Failure::Data(e.to_string()))?;
        write_json(&out.join("agreement.json"), &summary)?;
        println!("krippendorff_alpha={alpha:.3}");
    }
    Ok(())
}

/// Mann-Whitney U on per-run accuracy between every pair of groups with repeated runs.
fn group_tests(runs: &[RunResult]) -> Result<Vec<Comparison>, Failure> {
    let groups = summarize_groups(runs);
    let samples: Vec<(String, Vec<f64>)> = groups
        .iter()
        .filter(|g| g.runs > 1)
        .map(|g| {
            let acc = runs
                .iter()
                .filter(|r| format!("{}__{}", r.strategy, r.config) == g.group)
                .map(|r| r.report.accuracy)
                .collect();
            (g.group.clone(), acc)
        })
        .collect();
    let mut out = Vec::new();
    for (i, (a, xa)) in samples.iter().enumerate() {
        for (b, xb) in &samples[i + 1..] {
            let mw = mann_whitney_u(xa, xb)?;
            out.push(Comparison {
                a: a.clone(),
                b: b.clone(),
                test: "mann_whitney_u".into(),
                statistic: mw.u,
                p_value: mw.p_two_sided,
            });
        }
    }
    Ok(out)
}
