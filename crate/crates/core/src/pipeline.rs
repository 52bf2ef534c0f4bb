//! Evidence assembly and strategy execution over a dataset.
//!
//! For each claim an [`EvidenceBundle`] is assembled under an
//! [`EvidenceConfig`], then each [`Strategy`] routes the bundle through the
//! Analyzer and Verifier agents and yields a [`Prediction`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{
    chat_complete, join_text_evidence, parse_necessity, parse_verdict, render_analyzer_prompt,
    render_necessity_label_prompt, render_unified_prompt, render_verifier_prompt, split_analysis,
    AgentRole, Assessment, BackendError, ChatBackend, DecodingParams, ParseError, PromptError,
    Transcript,
};
use crate::corpus::{ClaimRecord, KnowledgeSource, Modality, Necessity, Verdict};
use crate::embed_index::{threshold_filter, top_k, FilterDecision, IndexError};
use crate::embedder::{EmbedError, EmbedInput, Embedder};
use crate::{jsonl, Embedding, Index};

/// Similarity threshold for the CLIP-style pre-filter.
pub const DEFAULT_TAU: f64 = 0.42;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration needs a {0:?} index")]
    MissingIndex(Modality),
    #[error("embedding failed for claim {claim_id}: {source}")]
    EmbeddingFailure {
        claim_id: String,
        #[source]
        source: EmbedError,
    },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("the oracle configuration is composed at evaluation time")]
    OracleNotMaterialized,
    #[error("evidence {0} missing from the knowledge source")]
    MissingEvidence(String),
    #[error("strategy {strategy} needs a configured {role} backend")]
    MissingBackend { strategy: String, role: &'static str },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("at least one (config, strategy) pair is required")]
    NothingToRun,
    #[error("claim {claim_id} failed under {run}: {message}")]
    Strict {
        claim_id: String,
        run: String,
        message: String,
    },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigKind {
    TextOnly,
    GoldImage,
    RetrievedImage,
    Oracle,
}

impl ConfigKind {
    fn as_str(self) -> &'static str {
        match self {
            ConfigKind::TextOnly => "text_only",
            ConfigKind::GoldImage => "gold_image",
            ConfigKind::RetrievedImage => "retrieved_image",
            ConfigKind::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    Gold,
    Retrieved,
}

/// Which evidence the Verifier is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvidenceConfig {
    pub kind: ConfigKind,
    pub text_source: TextSource,
    /// Sentences retrieved when `text_source` is `Retrieved`.
    pub k_text: usize,
}

impl EvidenceConfig {
    pub fn new(kind: ConfigKind, text_source: TextSource) -> Self {
        Self {
            kind,
            text_source,
            k_text: 1,
        }
    }

    /// Stable identifier, also used in file names: `kind.source[.kN]`.
    pub fn id(&self) -> String {
        let source = match self.text_source {
            TextSource::Gold => "gold",
            TextSource::Retrieved => "retrieved",
        };
        match (self.text_source, self.k_text) {
            (TextSource::Retrieved, k) if k != 1 => format!("{}.{source}.k{k}", self.kind.as_str()),
            _ => format!("{}.{source}", self.kind.as_str()),
        }
    }
}

impl fmt::Display for EvidenceConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for EvidenceConfig {
    type Err = String;

    /// Accepts `kind`, `kind.source` or `kind.retrieved.kN`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut it = s.split('.');
        let kind = match it.next().unwrap_or_default() {
            "text_only" => ConfigKind::TextOnly,
            "gold_image" => ConfigKind::GoldImage,
            "retrieved_image" => ConfigKind::RetrievedImage,
            "oracle" => ConfigKind::Oracle,
            other => return Err(format!("unknown evidence configuration {other:?}")),
        };
        let text_source = match it.next() {
            None | Some("gold") => TextSource::Gold,
            Some("retrieved") => TextSource::Retrieved,
            Some(other) => return Err(format!("unknown text source {other:?}")),
        };
        let k_text = match it.next() {
            None => 1,
            Some(k) => k
                .strip_prefix('k')
                .and_then(|n| n.parse().ok())
                .filter(|&n: &usize| n >= 1)
                .ok_or_else(|| format!("bad k suffix {k:?}"))?,
        };
        if it.next().is_some() {
            return Err(format!("trailing components in {s:?}"));
        }
        Ok(Self {
            kind,
            text_source,
            k_text,
        })
    }
}

/// How the Analyzer's output (if any) reaches the Verifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    /// Free-text necessity analysis in the `Image Analysis` slot; image always passed.
    Amufc,
    /// Yes/No label in the `Image Analysis` slot; image always passed.
    LabelOnly,
    /// Yes/No label decides whether the image is passed; no analysis text.
    PrefilterAnalyzer,
    /// Claim-image cosine similarity decides whether the image is passed.
    PrefilterThreshold { tau: f64 },
    NoAnalyzer,
    /// One call that produces the analysis and then the verdict.
    UnifiedVerifier,
    /// Verifier prompt without analysis; the model justifies before the verdict.
    VerifierCot,
    VerifierOnly,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Amufc => "amufc",
            Strategy::LabelOnly => "label_only",
            Strategy::PrefilterAnalyzer => "prefilter_analyzer",
            Strategy::PrefilterThreshold { .. } => "prefilter_threshold",
            Strategy::NoAnalyzer => "no_analyzer",
            Strategy::UnifiedVerifier => "unified_verifier",
            Strategy::VerifierCot => "verifier_cot",
            Strategy::VerifierOnly => "verifier_only",
        }
    }

    /// Parse a strategy name; `prefilter_threshold` takes `tau`.
    pub fn parse(name: &str, tau: f64) -> Result<Self, String> {
        Ok(match name.trim() {
            "amufc" => Strategy::Amufc,
            "label_only" => Strategy::LabelOnly,
            "prefilter_analyzer" => Strategy::PrefilterAnalyzer,
            "prefilter_threshold" => Strategy::PrefilterThreshold { tau },
            "no_analyzer" => Strategy::NoAnalyzer,
            "unified_verifier" => Strategy::UnifiedVerifier,
            "verifier_cot" => Strategy::VerifierCot,
            "verifier_only" => Strategy::VerifierOnly,
            other => return Err(format!("unknown strategy {other:?}")),
        })
    }

    pub fn needs_analyzer(&self) -> bool {
        matches!(
            self,
            Strategy::Amufc | Strategy::LabelOnly | Strategy::PrefilterAnalyzer
        )
    }

    pub fn needs_threshold_scorer(&self) -> bool {
        matches!(self, Strategy::PrefilterThreshold { .. })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    Gold,
    Retrieved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedEvidence {
    pub evidence_id: String,
    pub selection: Selection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMeta {
    pub config: String,
    pub text: Vec<SelectedEvidence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<SelectedEvidence>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Note recorded when a gold-image configuration finds no gold image.
pub const NOTE_NO_GOLD_IMAGE: &str = "no_gold_image";

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEvidence {
    pub evidence_id: String,
    /// Absolute file location.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceBundle {
    pub claim_id: String,
    pub claim_text: String,
    pub text_evidence: Vec<String>,
    pub image: Option<ImageEvidence>,
    pub selection: SelectionMeta,
}

impl EvidenceBundle {
    pub fn joined_text(&self) -> String {
        join_text_evidence(&self.text_evidence)
    }
}

/// A vector index plus the embedder that maps claim text into its space.
#[derive(Clone)]
pub struct Retriever {
    pub index: Arc<Index>,
    pub query_embedder: Arc<dyn Embedder>,
}

impl Retriever {
    fn search(&self, claim: &ClaimRecord, k: usize) -> Result<Vec<crate::embed_index::RetrievalHit>> {
        let raw = self
            .query_embedder
            .embed_one(EmbedInput::Text(claim.text.clone()))
            .map_err(|source| PipelineError::EmbeddingFailure {
                claim_id: claim.claim_id.clone(),
                source,
            })?;
        let q = Embedding::from_storage(&raw)?;
        Ok(top_k(&q, &self.index, k)?)
    }
}

/// Everything evidence assembly reads.
#[derive(Clone)]
pub struct Retrieval {
    pub knowledge: Arc<KnowledgeSource>,
    pub text: Option<Retriever>,
    pub image: Option<Retriever>,
}

impl Retrieval {
    pub fn gold_only(knowledge: Arc<KnowledgeSource>) -> Self {
        Self {
            knowledge,
            text: None,
            image: None,
        }
    }
}

fn sentence_of(ks: &KnowledgeSource, id: &str) -> Result<String> {
    ks.get(id)
        .and_then(|i| i.sentence())
        .map(str::to_string)
        .ok_or_else(|| PipelineError::MissingEvidence(id.to_string()))
}

fn image_of(ks: &KnowledgeSource, id: &str) -> Result<ImageEvidence> {
    let rel = ks
        .get(id)
        .and_then(|i| i.image_path())
        .ok_or_else(|| PipelineError::MissingEvidence(id.to_string()))?;
    Ok(ImageEvidence {
        evidence_id: id.to_string(),
        path: ks.resolve(rel),
    })
}

/// Select the text and image evidence for `claim` under `config`.
pub fn assemble_evidence(
    claim: &ClaimRecord,
    config: &EvidenceConfig,
    retrieval: &Retrieval,
) -> Result<EvidenceBundle> {
    let ks = &retrieval.knowledge;
    let mut meta = SelectionMeta {
        config: config.id(),
        text: Vec::new(),
        image: None,
        notes: Vec::new(),
    };
    if config.kind == ConfigKind::Oracle {
        return Err(PipelineError::OracleNotMaterialized);
    }

    let mut text_evidence = Vec::new();
    match config.text_source {
        TextSource::Gold => {
            for id in &claim.gold_text_evidence {
                text_evidence.push(sentence_of(ks, id)?);
                meta.text.push(SelectedEvidence {
                    evidence_id: id.clone(),
                    selection: Selection::Gold,
                    rank: None,
                    score: None,
                });
            }
        }
        TextSource::Retrieved => {
            let r = retrieval
                .text
                .as_ref()
                .ok_or(PipelineError::MissingIndex(Modality::Text))?;
            for hit in r.search(claim, config.k_text)? {
                text_evidence.push(sentence_of(ks, &hit.evidence_id)?);
                meta.text.push(SelectedEvidence {
                    evidence_id: hit.evidence_id,
                    selection: Selection::Retrieved,
                    rank: Some(hit.rank),
                    score: Some(hit.score),
                });
            }
        }
    }

    let image = match config.kind {
        ConfigKind::TextOnly | ConfigKind::Oracle => None,
        ConfigKind::GoldImage => match claim.gold_image_evidence.first() {
            Some(id) => {
                meta.image = Some(SelectedEvidence {
                    evidence_id: id.clone(),
                    selection: Selection::Gold,
                    rank: None,
                    score: None,
                });
                Some(image_of(ks, id)?)
            }
            None => {
                meta.notes.push(NOTE_NO_GOLD_IMAGE.into());
                None
            }
        },
        ConfigKind::RetrievedImage => {
            let r = retrieval
                .image
                .as_ref()
                .ok_or(PipelineError::MissingIndex(Modality::Image))?;
            let hit = r.search(claim, 1)?.into_iter().next();
            match hit {
                Some(hit) => {
                    let img = image_of(ks, &hit.evidence_id)?;
                    meta.image = Some(SelectedEvidence {
                        evidence_id: hit.evidence_id,
                        selection: Selection::Retrieved,
                        rank: Some(hit.rank),
                        score: Some(hit.score),
                    });
                    Some(img)
                }
                None => None,
            }
        }
    };

    Ok(EvidenceBundle {
        claim_id: claim.claim_id.clone(),
        claim_text: claim.text.clone(),
        text_evidence,
        image,
        selection: meta,
    })
}

/// One agent: a backend plus its decoding settings.
#[derive(Clone)]
pub struct Agent {
    pub backend: Arc<dyn ChatBackend>,
    pub decoding: DecodingParams,
}

impl Agent {
    pub fn new(backend: Arc<dyn ChatBackend>, decoding: DecodingParams) -> Self {
        Self { backend, decoding }
    }

    fn call(&self, role: AgentRole, msg: crate::agents::ChatMessage, t: &Transcript) -> Result<(String, f64)> {
        let c = chat_complete(self.backend.as_ref(), role, msg, &self.decoding, t)?;
        Ok((c.text, c.latency_ms.unwrap_or(0.0)))
    }
}

/// Scores claim-image similarity for the threshold pre-filter.
#[derive(Clone)]
pub struct ThresholdScorer {
    /// Embeds both claim text and images into a shared space.
    pub embedder: Arc<dyn Embedder>,
    /// Precomputed image vectors; images not found here are embedded on demand.
    pub image_index: Option<Arc<Index>>,
}

impl ThresholdScorer {
    pub fn vectors(&self, claim_id: &str, claim: &str, image: &ImageEvidence) -> Result<(Embedding, Embedding)> {
        let embed = |input| {
            self.embedder
                .embed_one(input)
                .map_err(|source| PipelineError::EmbeddingFailure {
                    claim_id: claim_id.to_string(),
                    source,
                })
        };
        let c = Embedding::from_storage(&embed(EmbedInput::Text(claim.to_string()))?)?;
        let i = match self.image_index.as_ref().and_then(|ix| ix.get(&image.evidence_id)) {
            Some(v) => v.clone(),
            None => Embedding::from_storage(&embed(EmbedInput::Image(image.path.clone()))?)?,
        };
        Ok((c, i))
    }
}

/// The agents a run can route through.
#[derive(Clone)]
pub struct AgentSet {
    pub analyzer: Option<Agent>,
    pub verifier: Agent,
    /// Per-strategy Verifier replacements, keyed by strategy name.
    pub verifier_overrides: HashMap<String, Agent>,
    pub threshold: Option<ThresholdScorer>,
}

impl AgentSet {
    pub fn new(verifier: Agent) -> Self {
        Self {
            analyzer: None,
            verifier,
            verifier_overrides: HashMap::new(),
            threshold: None,
        }
    }

    pub fn with_analyzer(mut self, analyzer: Agent) -> Self {
        self.analyzer = Some(analyzer);
        self
    }

    pub fn with_threshold(mut self, scorer: ThresholdScorer) -> Self {
        self.threshold = Some(scorer);
        self
    }

    fn verifier_for(&self, s: &Strategy) -> &Agent {
        self.verifier_overrides.get(s.name()).unwrap_or(&self.verifier)
    }

    /// Fails if `strategy` needs an agent this set lacks.
    pub fn check(&self, strategy: &Strategy) -> Result<()> {
        if strategy.needs_analyzer() && self.analyzer.is_none() {
            return Err(PipelineError::MissingBackend {
                strategy: strategy.name().into(),
                role: "analyzer",
            });
        }
        if strategy.needs_threshold_scorer() && self.threshold.is_none() {
            return Err(PipelineError::MissingBackend {
                strategy: strategy.name().into(),
                role: "embedder_image",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Ok,
    /// No verdict could be parsed; scored as NEI.
    Fallback,
    /// The claim failed before a verdict was produced; scored as NEI.
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyzer: Option<f64>,
    pub verifier: f64,
}

impl StageTiming {
    pub fn total_ms(&self) -> f64 {
        self.analyzer.unwrap_or(0.0) + self.verifier
    }
}

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub claim_id: String,
    pub strategy: String,
    pub config: String,
    pub verdict: Verdict,
    pub parse_status: ParseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub necessity: Option<Necessity>,
    pub raw_text: String,
    pub timing_ms: StageTiming,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Prediction {
    pub fn assessment(&self) -> Option<Assessment> {
        self.assessment_text.as_ref().map(|t| Assessment {
            text: t.clone(),
            necessity: self.necessity,
        })
    }

    fn failed(claim_id: &str, strategy: &Strategy, config: &str, err: &PipelineError) -> Self {
        Self {
            claim_id: claim_id.to_string(),
            strategy: strategy.name().into(),
            config: config.to_string(),
            verdict: Verdict::Nei,
            parse_status: ParseStatus::Error,
            assessment_text: None,
            necessity: None,
            raw_text: String::new(),
            timing_ms: StageTiming::default(),
            error: Some(err.to_string()),
        }
    }
}

/// Route one bundle through `strategy`.
pub fn run_strategy(
    bundle: &EvidenceBundle,
    strategy: &Strategy,
    agents: &AgentSet,
    transcript: &Transcript,
) -> Result<Prediction> {
    agents.check(strategy)?;
    let claim = bundle.claim_text.as_str();
    let text = bundle.joined_text();
    let image = bundle.image.as_ref().map(|i| i.path.as_path());
    let verifier = agents.verifier_for(strategy);
    let mut timing = StageTiming::default();
    let mut assessment: Option<Assessment> = None;

    let label_call = |img: &Path, timing: &mut StageTiming| -> Result<Necessity> {
        let analyzer = agents.analyzer.as_ref().expect("checked above");
        let msg = render_necessity_label_prompt(claim, Some(img), &text)?;
        let (raw, ms) = analyzer.call(AgentRole::Analyzer, msg, transcript)?;
        timing.analyzer = Some(ms);
        Ok(parse_necessity(&raw)?)
    };

    let verifier_msg = match (strategy, image) {
        (Strategy::Amufc, Some(img)) => {
            let analyzer = agents.analyzer.as_ref().expect("checked above");
            let msg = render_analyzer_prompt(claim, Some(img), &text)?;
            let (raw, ms) = analyzer.call(AgentRole::Analyzer, msg, transcript)?;
            timing.analyzer = Some(ms);
            let a = Assessment::from_analysis(raw);
            let m = render_verifier_prompt(claim, Some(img), Some(&a.text), &text)?;
            assessment = Some(a);
            m
        }
        (Strategy::LabelOnly, Some(img)) => {
            let a = Assessment::from_label(label_call(img, &mut timing)?);
            let m = render_verifier_prompt(claim, Some(img), Some(&a.text), &text)?;
            assessment = Some(a);
            m
        }
        (Strategy::PrefilterAnalyzer, Some(img)) => {
            let n = label_call(img, &mut timing)?;
            assessment = Some(Assessment::from_label(n));
            let keep = (n == Necessity::Necessary).then_some(img);
            render_verifier_prompt(claim, keep, None, &text)?
        }
        (Strategy::PrefilterThreshold { tau }, Some(img)) => {
            let scorer = agents.threshold.as_ref().expect("checked above");
            let ev = bundle.image.as_ref().expect("image present");
            let (c, i) = scorer.vectors(&bundle.claim_id, claim, ev)?;
            let keep = (threshold_filter(&c, &i, *tau)? == FilterDecision::Keep).then_some(img);
            render_verifier_prompt(claim, keep, None, &text)?
        }
        (Strategy::UnifiedVerifier, _) => render_unified_prompt(claim, image, &text)?,
        // Everything else, and any strategy without an image candidate.
        _ => render_verifier_prompt(claim, image, None, &text)?,
    };

    let (raw, ms) = verifier.call(AgentRole::Verifier, verifier_msg, transcript)?;
    timing.verifier = ms;

    if *strategy == Strategy::UnifiedVerifier {
        assessment = split_analysis(&raw).map(Assessment::from_analysis);
    }

    let (verdict, parse_status) = match parse_verdict(&raw) {
        Ok(v) => (v, ParseStatus::Ok),
        Err(_) => (Verdict::Nei, ParseStatus::Fallback),
    };
    Ok(Prediction {
        claim_id: bundle.claim_id.clone(),
        strategy: strategy.name().into(),
        config: bundle.selection.config.clone(),
        verdict,
        parse_status,
        assessment_text: assessment.as_ref().map(|a| a.text.clone()),
        necessity: assessment.and_then(|a| a.necessity),
        raw_text: raw,
        timing_ms: timing,
        error: None,
    })
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub parallelism: usize,
    pub strict: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            parallelism: 4,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: String,
    pub config: String,
    pub file: String,
    pub n: usize,
    pub n_fallback: usize,
    pub n_error: usize,
    /// Mean per-claim time, analyzer plus verifier stages.
    pub per_sample_ms: f64,
    pub mean_analyzer_ms: Option<f64>,
    pub mean_verifier_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset_digest: String,
    pub config: Value,
    pub backend_tags: BTreeMap<String, String>,
    pub transcript_refs: Vec<String>,
    pub started: String,
    pub finished: String,
    pub wall_clock_ms: f64,
    pub parallelism: usize,
    pub runs: Vec<RunRecord>,
    /// Same numbers as `runs[*].per_sample_ms`, keyed by run name.
    pub per_sample_ms: BTreeMap<String, f64>,
}

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const PREDICTIONS_DIR: &str = "predictions";

/// Run name and file stem for a (strategy, config) pair.
pub fn run_name(strategy: &Strategy, config: &EvidenceConfig) -> String {
    format!("{}__{}", strategy.name(), config.id())
}

/// SHA-256 over the claims in order.
pub fn dataset_digest(claims: &[ClaimRecord]) -> String {
    let mut h = Sha256::new();
    for c in claims {
        h.update(serde_json::to_vec(c).expect("claim serializes"));
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Metadata recorded in the manifest besides the predictions.
#[derive(Debug, Clone, Default)]
pub struct RunContext {
    pub config: Value,
    pub backend_tags: BTreeMap<String, String>,
    pub transcript_refs: Vec<String>,
}

/// Run every (config, strategy) pair over `claims`, writing one predictions
/// file per pair plus the run manifest. Claims are processed in claim-id
/// order so output files do not depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn run_dataset(
    claims: &[ClaimRecord],
    configs: &[EvidenceConfig],
    strategies: &[Strategy],
    agents: &AgentSet,
    retrieval: &Retrieval,
    transcript: &Transcript,
    opts: &RunOptions,
    ctx: RunContext,
) -> Result<RunManifest> {
    if configs.is_empty() || strategies.is_empty() {
        return Err(PipelineError::NothingToRun);
    }
    for s in strategies {
        agents.check(s)?;
    }
    let started_at = Utc::now();
    let clock = Instant::now();
    let mut ordered: Vec<&ClaimRecord> = claims.iter().collect();
    ordered.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism.max(1))
        .build()
        .expect("thread pool");
    let pred_dir = opts.out_dir.join(PREDICTIONS_DIR);
    fs::create_dir_all(&pred_dir).map_err(|source| PipelineError::Io {
        path: pred_dir.clone(),
        source,
    })?;

    let mut runs = Vec::new();
    for config in configs {
        let bundles: Vec<Result<EvidenceBundle>> = pool.install(|| {
            ordered
                .par_iter()
                .map(|c| assemble_evidence(c, config, retrieval))
                .collect()
        });
        for strategy in strategies {
            let name = run_name(strategy, config);
            let preds: Vec<Prediction> = pool.install(|| {
                ordered
                    .par_iter()
                    .zip(bundles.par_iter())
                    .map(|(claim, bundle)| {
                        let r = match bundle {
                            Ok(b) => run_strategy(b, strategy, agents, transcript),
                            Err(e) => Err(PipelineError::Strict {
                                claim_id: claim.claim_id.clone(),
                                run: name.clone(),
                                message: e.to_string(),
                            }),
                        };
                        r.unwrap_or_else(|e| {
                            Prediction::failed(&claim.claim_id, strategy, &config.id(), &e)
                        })
                    })
                    .collect()
            });
            if opts.strict {
                if let Some(p) = preds.iter().find(|p| p.parse_status == ParseStatus::Error) {
                    return Err(PipelineError::Strict {
                        claim_id: p.claim_id.clone(),
                        run: name,
                        message: p.error.clone().unwrap_or_default(),
                    });
                }
            }
            let file = format!("{name}.jsonl");
            let path = pred_dir.join(&file);
            jsonl::write_records(&path, &preds).map_err(|source| PipelineError::Io {
                path: path.clone(),
                source,
            })?;
            runs.push(summarize_run(strategy, config, &file, &preds));
        }
    }

    let per_sample_ms = runs
        .iter()
        .map(|r| (format!("{}__{}", r.strategy, r.config), r.per_sample_ms))
        .collect();
    let manifest = RunManifest {
        dataset_digest: dataset_digest(claims),
        config: ctx.config,
        backend_tags: ctx.backend_tags,
        transcript_refs: ctx.transcript_refs,
        started: started_at.to_rfc3339_opts(SecondsFormat::Millis, true),
        finished: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        wall_clock_ms: clock.elapsed().as_secs_f64() * 1e3,
        parallelism: opts.parallelism.max(1),
        runs,
        per_sample_ms,
    };
    let mpath = opts.out_dir.join(MANIFEST_FILE);
    let body = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    jsonl::write_atomic(&mpath, &body).map_err(|source| PipelineError::Io {
        path: mpath,
        source,
    })?;
    Ok(manifest)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize_run(strategy: &Strategy, config: &EvidenceConfig, file: &str, preds: &[Prediction]) -> RunRecord {
    let scored: Vec<&Prediction> = preds
        .iter()
        .filter(|p| p.parse_status != ParseStatus::Error)
        .collect();
    RunRecord {
        strategy: strategy.name().into(),
        config: config.id(),
        file: format!("{PREDICTIONS_DIR}/{file}"),
        n: preds.len(),
        n_fallback: preds.iter().filter(|p| p.parse_status == ParseStatus::Fallback).count(),
        n_error: preds.len() - scored.len(),
        per_sample_ms: mean(scored.iter().map(|p| p.timing_ms.total_ms())).unwrap_or(0.0),
        mean_analyzer_ms: mean(scored.iter().filter_map(|p| p.timing_ms.analyzer)),
        mean_verifier_ms: mean(scored.iter().map(|p| p.timing_ms.verifier)).unwrap_or(0.0),
    }
}

/// Read a predictions file written by [`run_dataset`].
pub fn load_predictions(path: &Path) -> std::io::Result<Vec<Prediction>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
        .collect()
}
