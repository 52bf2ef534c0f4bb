//! Claim, evidence and annotation datasets in one canonical on-disk schema.
//!
//! A dataset directory holds `claims.jsonl` and `evidence.jsonl`; image
//! evidence lives as files under the same directory and is referenced by
//! relative path. MOCHEG, FIN-FACT and WebFC all load through this module.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use tracing::warn;

use crate::jsonl::{self, LineError};

pub const CLAIMS_FILE: &str = "claims.jsonl";
pub const EVIDENCE_FILE: &str = "evidence.jsonl";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: schema violation in field `{field}`: {reason}")]
    SchemaViolation {
        file: PathBuf,
        line: usize,
        field: String,
        reason: String,
    },
    #[error("claim {claim_id} references unknown evidence {evidence_id}")]
    DanglingEvidenceRef {
        claim_id: String,
        evidence_id: String,
    },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("unknown verdict label {0:?}")]
    UnknownLabel(String),
    #[error("duplicate annotation for claim {claim_id} by {annotator_id}")]
    DuplicateAnnotation {
        claim_id: String,
        annotator_id: String,
    },
    #[error("image evidence {evidence_id} is not a readable file: {path}")]
    UnreadableImage { evidence_id: String, path: PathBuf },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Three-way verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Supported,
    Refuted,
    #[serde(rename = "NEI")]
    Nei,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::Supported, Verdict::Refuted, Verdict::Nei];

    pub fn index(self) -> usize {
        match self {
            Verdict::Supported => 0,
            Verdict::Refuted => 1,
            Verdict::Nei => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Supported => "Supported",
            Verdict::Refuted => "Refuted",
            Verdict::Nei => "NEI",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which source dataset a file came from. Only affects label mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatTag {
    Mocheg,
    Finfact,
    Webfc,
}

impl FormatTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FormatTag::Mocheg => "mocheg",
            FormatTag::Finfact => "finfact",
            FormatTag::Webfc => "webfc",
        }
    }
}

impl FromStr for FormatTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mocheg" => Ok(FormatTag::Mocheg),
            "finfact" | "fin-fact" => Ok(FormatTag::Finfact),
            "webfc" => Ok(FormatTag::Webfc),
            other => Err(format!("unknown format tag {other:?} (expected mocheg, finfact or webfc)")),
        }
    }
}

/// Map a dataset's raw label string onto [`Verdict`].
///
/// FIN-FACT uses `True`/`False`; these become `Supported`/`Refuted`.
/// Canonical names are accepted for every format, case-insensitively.
pub fn map_external_label(raw: &str, format: FormatTag) -> Result<Verdict> {
    let norm = raw.trim().to_ascii_lowercase();
    if format == FormatTag::Finfact {
        match norm.as_str() {
            "true" => return Ok(Verdict::Supported),
            "false" => return Ok(Verdict::Refuted),
            _ => {}
        }
    }
    match norm.as_str() {
        "supported" => Ok(Verdict::Supported),
        "refuted" => Ok(Verdict::Refuted),
        "nei" | "not enough information" | "not enough info" => Ok(Verdict::Nei),
        _ => Err(CorpusError::UnknownLabel(raw.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Text,
    Image,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
        }
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            other => Err(format!("unknown modality {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvidencePayload {
    /// One sentence.
    Text(String),
    /// Image file, relative to the dataset root.
    Image(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceItem {
    pub evidence_id: String,
    pub payload: EvidencePayload,
    pub provenance_url: Option<String>,
    pub publish_date: Option<NaiveDate>,
}

impl EvidenceItem {
    pub fn text(id: impl Into<String>, sentence: impl Into<String>) -> Self {
        Self {
            evidence_id: id.into(),
            payload: EvidencePayload::Text(sentence.into()),
            provenance_url: None,
            publish_date: None,
        }
    }

    pub fn image(id: impl Into<String>, rel_path: impl Into<PathBuf>) -> Self {
        Self {
            evidence_id: id.into(),
            payload: EvidencePayload::Image(rel_path.into()),
            provenance_url: None,
            publish_date: None,
        }
    }

    pub fn modality(&self) -> Modality {
        match self.payload {
            EvidencePayload::Text(_) => Modality::Text,
            EvidencePayload::Image(_) => Modality::Image,
        }
    }

    pub fn sentence(&self) -> Option<&str> {
        match &self.payload {
            EvidencePayload::Text(s) => Some(s),
            EvidencePayload::Image(_) => None,
        }
    }

    pub fn image_path(&self) -> Option<&Path> {
        match &self.payload {
            EvidencePayload::Image(p) => Some(p),
            EvidencePayload::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClaimRecord {
    pub claim_id: String,
    pub text: String,
    pub gold_verdict: Verdict,
    pub gold_text_evidence: Vec<String>,
    pub gold_image_evidence: Vec<String>,
    pub source: String,
    pub factcheck_date: Option<NaiveDate>,
}

/// The pool of candidate evidence, in file order, with a global id index.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeSource {
    root: PathBuf,
    items: Vec<EvidenceItem>,
    by_id: HashMap<String, usize>,
}

impl PartialEq for KnowledgeSource {
    fn eq(&self, other: &Self) -> bool {
        self.items == other.items
    }
}

impl KnowledgeSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            ..Self::default()
        }
    }

    /// Build from items, rejecting duplicate ids.
    pub fn from_items(root: impl Into<PathBuf>, items: Vec<EvidenceItem>) -> Result<Self> {
        let mut ks = Self::new(root);
        for item in items {
            ks.insert(item)?;
        }
        Ok(ks)
    }

    pub fn insert(&mut self, item: EvidenceItem) -> Result<()> {
        if self.by_id.contains_key(&item.evidence_id) {
            return Err(CorpusError::DuplicateId {
                kind: "evidence",
                id: item.evidence_id,
            });
        }
        self.by_id.insert(item.evidence_id.clone(), self.items.len());
        self.items.push(item);
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn get(&self, id: &str) -> Option<&EvidenceItem> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn items(&self) -> &[EvidenceItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn text_items(&self) -> impl Iterator<Item = &EvidenceItem> {
        self.items.iter().filter(|i| i.modality() == Modality::Text)
    }

    pub fn image_items(&self) -> impl Iterator<Item = &EvidenceItem> {
        self.items.iter().filter(|i| i.modality() == Modality::Image)
    }

    /// Absolute location of an image item's file.
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }
}

/// Counters gathered while loading.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub claims: usize,
    pub text_items: usize,
    pub image_items: usize,
    pub unparseable_dates: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub claims: Vec<ClaimRecord>,
    pub knowledge: KnowledgeSource,
    pub report: LoadReport,
}

impl Dataset {
    pub fn claim(&self, id: &str) -> Option<&ClaimRecord> {
        self.claims.iter().find(|c| c.claim_id == id)
    }
}

// ---- field access helpers ----

struct Fields<'a> {
    file: &'a Path,
    line: usize,
    obj: &'a Map<String, Value>,
}

impl<'a> Fields<'a> {
    fn violation(&self, field: &str, reason: impl Into<String>) -> CorpusError {
        CorpusError::SchemaViolation {
            file: self.file.to_path_buf(),
            line: self.line,
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    fn opt_str(&self, field: &str) -> Result<Option<&'a str>> {
        match self.obj.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(self.violation(field, "expected a string")),
        }
    }

    fn req_str(&self, field: &str) -> Result<&'a str> {
        self.opt_str(field)?
            .ok_or_else(|| self.violation(field, "required field missing"))
    }

    fn non_empty(&self, field: &str) -> Result<&'a str> {
        let s = self.req_str(field)?;
        if s.trim().is_empty() {
            return Err(self.violation(field, "must not be empty"));
        }
        Ok(s)
    }

    fn id_list(&self, field: &str) -> Result<Vec<String>> {
        match self.obj.get(field) {
            None | Some(Value::Null) => Ok(Vec::new()),
            Some(Value::Array(xs)) => xs
                .iter()
                .map(|x| {
                    x.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| self.violation(field, "expected an array of strings"))
                })
                .collect(),
            Some(_) => Err(self.violation(field, "expected an array of strings")),
        }
    }

    /// Dirty dates load as absent; the caller counts them.
    fn lenient_date(&self, field: &str, bad: &mut usize) -> Result<Option<NaiveDate>> {
        let Some(raw) = self.opt_str(field)? else {
            return Ok(None);
        };
        match parse_date(raw) {
            Some(d) => Ok(Some(d)),
            None => {
                warn!(file = %self.file.display(), line = self.line, field, raw, "unparseable date, treating as absent");
                *bad += 1;
                Ok(None)
            }
        }
    }
}

/// Parse an ISO-8601 calendar date, also accepting a full timestamp whose
/// date part is taken.
pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    let raw = raw.trim();
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return Some(d);
    }
    if let Ok(ts) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Some(ts.date_naive());
    }
    if raw.len() > 10 && raw.is_char_boundary(10) {
        if let Ok(d) = NaiveDate::parse_from_str(&raw[..10], "%Y-%m-%d") {
            let rest = raw.as_bytes()[10];
            if rest == b'T' || rest == b' ' {
                return Some(d);
            }
        }
    }
    None
}

fn read_lines(path: &Path) -> Result<Vec<jsonl::Line>> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    jsonl::read_objects(path).map_err(|e| match e {
        LineError::Io(source) => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        LineError::NotObject { number, reason } => CorpusError::SchemaViolation {
            file: path.to_path_buf(),
            line: number,
            field: "<record>".into(),
            reason,
        },
    })
}

fn parse_evidence(f: &Fields<'_>, root: &Path, bad_dates: &mut usize) -> Result<EvidenceItem> {
    let evidence_id = f.non_empty("evidence_id")?.to_string();
    let modality: Modality = f
        .req_str("modality")?
        .parse()
        .map_err(|e: String| f.violation("modality", e))?;
    let payload = match modality {
        Modality::Text => EvidencePayload::Text(f.non_empty("text")?.to_string()),
        Modality::Image => {
            let rel = PathBuf::from(f.non_empty("image_path")?);
            if rel.is_absolute() {
                return Err(f.violation("image_path", "must be relative to the dataset root"));
            }
            let abs = root.join(&rel);
            if !abs.is_file() {
                return Err(CorpusError::UnreadableImage {
                    evidence_id,
                    path: abs,
                });
            }
            EvidencePayload::Image(rel)
        }
    };
    Ok(EvidenceItem {
        evidence_id,
        payload,
        provenance_url: f.opt_str("provenance_url")?.map(str::to_string),
        publish_date: f.lenient_date("publish_date", bad_dates)?,
    })
}

fn parse_claim(f: &Fields<'_>, format: FormatTag, bad_dates: &mut usize) -> Result<ClaimRecord> {
    let claim_id = f.non_empty("claim_id")?.to_string();
    let text = f.non_empty("text")?.to_string();
    let gold_verdict = map_external_label(f.req_str("gold_verdict")?, format)
        .map_err(|e| f.violation("gold_verdict", e.to_string()))?;
    Ok(ClaimRecord {
        claim_id,
        text,
        gold_verdict,
        gold_text_evidence: f.id_list("gold_text_evidence")?,
        gold_image_evidence: f.id_list("gold_image_evidence")?,
        source: f.opt_str("source")?.unwrap_or(format.as_str()).to_string(),
        factcheck_date: f.lenient_date("factcheck_date", bad_dates)?,
    })
}

/// Load and validate a canonical dataset directory.
pub fn load_dataset(dir: &Path, format: FormatTag) -> Result<Dataset> {
    let claims_path = dir.join(CLAIMS_FILE);
    let evidence_path = dir.join(EVIDENCE_FILE);
    let mut report = LoadReport::default();

    let mut knowledge = KnowledgeSource::new(dir);
    for line in read_lines(&evidence_path)? {
        let f = Fields {
            file: &evidence_path,
            line: line.number,
            obj: &line.object,
        };
        let item = parse_evidence(&f, dir, &mut report.unparseable_dates)?;
        knowledge.insert(item)?;
    }

    let mut seen = HashSet::new();
    let mut claims = Vec::new();
    for line in read_lines(&claims_path)? {
        let f = Fields {
            file: &claims_path,
            line: line.number,
            obj: &line.object,
        };
        let claim = parse_claim(&f, format, &mut report.unparseable_dates)?;
        if !seen.insert(claim.claim_id.clone()) {
            return Err(CorpusError::DuplicateId {
                kind: "claim",
                id: claim.claim_id,
            });
        }
        check_refs(&claim, &knowledge)?;
        claims.push(claim);
    }

    report.claims = claims.len();
    report.text_items = knowledge.text_items().count();
    report.image_items = knowledge.image_items().count();
    Ok(Dataset {
        claims,
        knowledge,
        report,
    })
}

fn check_refs(claim: &ClaimRecord, ks: &KnowledgeSource) -> Result<()> {
    let refs = claim
        .gold_text_evidence
        .iter()
        .chain(claim.gold_image_evidence.iter());
    for id in refs {
        if ks.get(id).is_none() {
            return Err(CorpusError::DanglingEvidenceRef {
                claim_id: claim.claim_id.clone(),
                evidence_id: id.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ClaimOut<'a> {
    claim_id: &'a str,
    text: &'a str,
    gold_verdict: Verdict,
    gold_text_evidence: &'a [String],
    gold_image_evidence: &'a [String],
    source: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    factcheck_date: Option<String>,
}

#[derive(Serialize)]
struct EvidenceOut<'a> {
    evidence_id: &'a str,
    modality: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance_url: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    publish_date: Option<String>,
}

fn date_str(d: Option<NaiveDate>) -> Option<String> {
    d.map(|d| d.format("%Y-%m-%d").to_string())
}

/// Write `claims` and `knowledge` as a canonical dataset under `dir`.
///
/// Image files are copied from the source root when `dir` differs from it.
pub fn save_dataset(dir: &Path, claims: &[ClaimRecord], knowledge: &KnowledgeSource) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let same_root = fs::canonicalize(dir).ok() == fs::canonicalize(knowledge.root()).ok();

    let mut evidence = Vec::with_capacity(knowledge.len());
    for item in knowledge.items() {
        let image_path = item.image_path().map(|rel| {
            rel.to_string_lossy().replace('\\', "/")
        });
        if let (Some(rel), false) = (item.image_path(), same_root) {
            let src = knowledge.resolve(rel);
            let dst = dir.join(rel);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            fs::copy(&src, &dst).map_err(io_err(&src))?;
        }
        evidence.push(EvidenceOut {
            evidence_id: &item.evidence_id,
            modality: item.modality().as_str(),
            text: item.sentence(),
            image_path,
            provenance_url: item.provenance_url.as_deref(),
            publish_date: date_str(item.publish_date),
        });
    }
    let ev_path = dir.join(EVIDENCE_FILE);
    jsonl::write_records(&ev_path, &evidence).map_err(io_err(&ev_path))?;

    let out: Vec<_> = claims
        .iter()
        .map(|c| ClaimOut {
            claim_id: &c.claim_id,
            text: &c.text,
            gold_verdict: c.gold_verdict,
            gold_text_evidence: &c.gold_text_evidence,
            gold_image_evidence: &c.gold_image_evidence,
            source: &c.source,
            factcheck_date: date_str(c.factcheck_date),
        })
        .collect();
    let claims_path = dir.join(CLAIMS_FILE);
    jsonl::write_records(&claims_path, &out).map_err(io_err(&claims_path))
}

// ---- FIN-FACT sanitization ----

/// One record of the raw FIN-FACT release, before sanitization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinFactRaw {
    pub claim_id: String,
    pub claim: String,
    pub label: String,
    /// Evidence passages; each is split into sentences for the knowledge source.
    #[serde(default)]
    pub evidence: Vec<String>,
    #[serde(default)]
    pub image_urls: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub justification: Option<String>,
}

impl FinFactRaw {
    pub fn is_multimodal(&self) -> bool {
        !self.image_urls.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum DownloadOutcome {
    /// Stored at `path`, relative to the download directory.
    Fetched { path: PathBuf },
    Failed,
}

#[derive(Debug, Clone, Default)]
pub struct DownloadReport {
    outcomes: HashMap<String, DownloadOutcome>,
}

#[derive(Deserialize)]
struct DownloadLine {
    url: String,
    #[serde(flatten)]
    outcome: DownloadOutcome,
}

impl DownloadReport {
    pub fn insert(&mut self, url: impl Into<String>, outcome: DownloadOutcome) {
        self.outcomes.insert(url.into(), outcome);
    }

    /// Path of the downloaded file, if the fetch succeeded. Unknown URLs count as failed.
    pub fn fetched(&self, url: &str) -> Option<&Path> {
        match self.outcomes.get(url) {
            Some(DownloadOutcome::Fetched { path }) => Some(path),
            _ => None,
        }
    }

    /// Read a `{url, status: fetched|failed, path?}` JSON-lines file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut report = Self::default();
        for line in read_lines(path)? {
            let parsed: DownloadLine = serde_json::from_value(Value::Object(line.object))
                .map_err(|e| CorpusError::SchemaViolation {
                    file: path.to_path_buf(),
                    line: line.number,
                    field: "status".into(),
                    reason: e.to_string(),
                })?;
            report.insert(parsed.url, parsed.outcome);
        }
        Ok(report)
    }
}

/// Drop multimodal claims none of whose images downloaded, and prune failed
/// image URLs from the ones kept. Text-only claims always survive.
pub fn sanitize_finfact(raw: &[FinFactRaw], report: &DownloadReport) -> Vec<FinFactRaw> {
    raw.iter()
        .filter_map(|r| {
            if !r.is_multimodal() {
                return Some(r.clone());
            }
            let kept: Vec<String> = r
                .image_urls
                .iter()
                .filter(|u| report.fetched(u).is_some())
                .cloned()
                .collect();
            if kept.is_empty() {
                None
            } else {
                Some(FinFactRaw {
                    image_urls: kept,
                    ..r.clone()
                })
            }
        })
        .collect()
}

/// Naive sentence splitter for evidence passages.
pub fn split_sentences(passage: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = passage.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        cur.push(c);
        let ends = matches!(c, '.' | '!' | '?')
            && chars.get(i + 1).is_none_or(|n| n.is_whitespace());
        if ends {
            let s = cur.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            cur.clear();
        }
    }
    let s = cur.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

/// Convert sanitized FIN-FACT records into canonical claims and a knowledge
/// source of evidence sentences plus downloaded images. `download_root` is
/// the directory the report's paths are relative to.
pub fn finfact_to_canonical(
    records: &[FinFactRaw],
    report: &DownloadReport,
    download_root: &Path,
) -> Result<(Vec<ClaimRecord>, KnowledgeSource)> {
    let mut ks = KnowledgeSource::new(download_root);
    let mut claims = Vec::with_capacity(records.len());
    let mut seen_images: HashMap<PathBuf, String> = HashMap::new();
    for r in records {
        let verdict = map_external_label(&r.label, FormatTag::Finfact)?;
        let mut text_ids = Vec::new();
        let sentences = r.evidence.iter().flat_map(|p| split_sentences(p));
        for (j, s) in sentences.enumerate() {
            let id = format!("{}-t{}", r.claim_id, j);
            ks.insert(EvidenceItem::text(id.clone(), s))?;
            text_ids.push(id);
        }
        let mut image_ids = Vec::new();
        for (j, url) in r.image_urls.iter().enumerate() {
            let Some(rel) = report.fetched(url) else { continue };
            if let Some(existing) = seen_images.get(rel) {
                image_ids.push(existing.clone());
                continue;
            }
            let id = format!("{}-i{}", r.claim_id, j);
            let mut item = EvidenceItem::image(id.clone(), rel);
            item.provenance_url = Some(url.clone());
            ks.insert(item)?;
            seen_images.insert(rel.to_path_buf(), id.clone());
            image_ids.push(id);
        }
        claims.push(ClaimRecord {
            claim_id: r.claim_id.clone(),
            text: r.claim.clone(),
            gold_verdict: verdict,
            gold_text_evidence: text_ids,
            gold_image_evidence: image_ids,
            source: FormatTag::Finfact.as_str().into(),
            factcheck_date: None,
        });
    }
    Ok((claims, ks))
}

pub fn load_finfact_raw(path: &Path) -> Result<Vec<FinFactRaw>> {
    read_lines(path)?
        .into_iter()
        .map(|line| {
            serde_json::from_value(Value::Object(line.object)).map_err(|e| {
                CorpusError::SchemaViolation {
                    file: path.to_path_buf(),
                    line: line.number,
                    field: "<record>".into(),
                    reason: e.to_string(),
                }
            })
        })
        .collect()
}

// ---- annotations ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Necessity {
    Necessary,
    Unnecessary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClaimCategory {
    VisualSuccessful,
    VisualUnsuccessful,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub claim_id: String,
    pub annotator_id: String,
    pub necessity_label: Necessity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_category: Option<ClaimCategory>,
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in read_lines(path)? {
        let f = Fields {
            file: path,
            line: line.number,
            obj: &line.object,
        };
        let claim_id = f.non_empty("claim_id")?.to_string();
        let annotator_id = f.non_empty("annotator_id")?.to_string();
        let necessity_label = serde_json::from_value(Value::String(
            f.req_str("necessity_label")?.to_string(),
        ))
        .map_err(|_| f.violation("necessity_label", "expected Necessary or Unnecessary"))?;
        let claim_category = match f.opt_str("claim_category")? {
            None => None,
            Some(s) => Some(
                serde_json::from_value(Value::String(s.to_string())).map_err(|_| {
                    f.violation(
                        "claim_category",
                        "expected VisualSuccessful or VisualUnsuccessful",
                    )
                })?,
            ),
        };
        if !seen.insert((claim_id.clone(), annotator_id.clone())) {
            return Err(CorpusError::DuplicateAnnotation {
                claim_id,
                annotator_id,
            });
        }
        out.push(AnnotationRecord {
            claim_id,
            annotator_id,
            necessity_label,
            claim_category,
        });
    }
    Ok(out)
}

pub fn save_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    jsonl::write_records(path, records).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) {
        let mut f = fs::File::create(dir.join(name)).unwrap();
        f.write_all(body.as_bytes()).unwrap();
    }

    #[test]
    fn label_mapping() {
        assert_eq!(map_external_label("True", FormatTag::Finfact).unwrap(), Verdict::Supported);
        assert_eq!(map_external_label("False", FormatTag::Finfact).unwrap(), Verdict::Refuted);
        assert_eq!(map_external_label("Supported", FormatTag::Mocheg).unwrap(), Verdict::Supported);
        assert_eq!(map_external_label("nei", FormatTag::Webfc).unwrap(), Verdict::Nei);
        assert!(matches!(
            map_external_label("Maybe", FormatTag::Finfact),
            Err(CorpusError::UnknownLabel(s)) if s == "Maybe"
        ));
        // True/False only mean something for FIN-FACT
        assert!(map_external_label("True", FormatTag::Mocheg).is_err());
    }

    #[test]
    fn empty_files_load_empty() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), CLAIMS_FILE, "");
        write(dir.path(), EVIDENCE_FILE, "");
        let ds = load_dataset(dir.path(), FormatTag::Mocheg).unwrap();
        assert!(ds.claims.is_empty());
        assert!(ds.knowledge.is_empty());
    }

    #[test]
    fn missing_file() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), CLAIMS_FILE, "");
        assert!(matches!(
            load_dataset(dir.path(), FormatTag::Mocheg),
            Err(CorpusError::MissingFile(p)) if p.ends_with(EVIDENCE_FILE)
        ));
    }

    #[test]
    fn dangling_reference() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            EVIDENCE_FILE,
            r#"{"evidence_id":"e1","modality":"text","text":"A sentence."}"#,
        );
        write(
            dir.path(),
            CLAIMS_FILE,
            r#"{"claim_id":"c1","text":"X","gold_verdict":"Refuted","gold_text_evidence":["e1","e9"],"gold_image_evidence":[],"source":"mocheg"}"#,
        );
        let err = load_dataset(dir.path(), FormatTag::Mocheg).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::DanglingEvidenceRef { ref claim_id, ref evidence_id }
                if claim_id == "c1" && evidence_id == "e9"
        ));
    }

    #[test]
    fn schema_violation_names_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), EVIDENCE_FILE, "");
        write(
            dir.path(),
            CLAIMS_FILE,
            "{\"claim_id\":\"c1\",\"text\":\"ok\",\"gold_verdict\":\"NEI\"}\n\n{\"claim_id\":\"c2\",\"text\":\"\",\"gold_verdict\":\"NEI\"}\n",
        );
        match load_dataset(dir.path(), FormatTag::Mocheg).unwrap_err() {
            CorpusError::SchemaViolation { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "text");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_dates_become_absent() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            EVIDENCE_FILE,
            r#"{"evidence_id":"e1","modality":"text","text":"s","publish_date":"last tuesday"}"#,
        );
        write(
            dir.path(),
            CLAIMS_FILE,
            r#"{"claim_id":"c1","text":"X","gold_verdict":"supported","factcheck_date":"2024-05-01T10:00:00Z"}"#,
        );
        let ds = load_dataset(dir.path(), FormatTag::Webfc).unwrap();
        assert_eq!(ds.report.unparseable_dates, 1);
        assert_eq!(ds.knowledge.get("e1").unwrap().publish_date, None);
        assert_eq!(
            ds.claims[0].factcheck_date,
            NaiveDate::from_ymd_opt(2024, 5, 1)
        );
    }

    #[test]
    fn image_must_exist() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            EVIDENCE_FILE,
            r#"{"evidence_id":"i1","modality":"image","image_path":"images/a.jpg"}"#,
        );
        write(dir.path(), CLAIMS_FILE, "");
        assert!(matches!(
            load_dataset(dir.path(), FormatTag::Mocheg),
            Err(CorpusError::UnreadableImage { .. })
        ));
        fs::create_dir_all(dir.path().join("images")).unwrap();
        write(&dir.path().join("images"), "a.jpg", "jpeg");
        let ds = load_dataset(dir.path(), FormatTag::Mocheg).unwrap();
        assert_eq!(ds.report.image_items, 1);
    }

    #[test]
    fn duplicate_evidence_id() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            EVIDENCE_FILE,
            "{\"evidence_id\":\"e1\",\"modality\":\"text\",\"text\":\"a\"}\n{\"evidence_id\":\"e1\",\"modality\":\"text\",\"text\":\"b\"}\n",
        );
        write(dir.path(), CLAIMS_FILE, "");
        assert!(matches!(
            load_dataset(dir.path(), FormatTag::Mocheg),
            Err(CorpusError::DuplicateId { kind: "evidence", .. })
        ));
    }

    fn raw(id: usize, images: usize) -> FinFactRaw {
        FinFactRaw {
            claim_id: format!("ff{id}"),
            claim: format!("claim {id}"),
            label: if id.is_multiple_of(2) { "True" } else { "False" }.into(),
            evidence: vec![format!("Evidence for {id}. Second sentence.")],
            image_urls: (0..images).map(|j| format!("http://img/{id}/{j}")).collect(),
            justification: None,
        }
    }

    #[test]
    fn sanitize_all_fetches_fail() {
        let recs: Vec<_> = (0..6).map(|i| raw(i, i % 2 * 2)).collect();
        let out = sanitize_finfact(&recs, &DownloadReport::default());
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|r| !r.is_multimodal()));
    }

    #[test]
    fn sanitize_single_fetched_image_suffices() {
        let recs: Vec<_> = (0..10).map(|i| raw(i, 3)).collect();
        let mut report = DownloadReport::default();
        for r in &recs {
            report.insert(
                r.image_urls[1].clone(),
                DownloadOutcome::Fetched {
                    path: format!("{}.jpg", r.claim_id).into(),
                },
            );
        }
        let out = sanitize_finfact(&recs, &report);
        // enumerate the rule by hand: each claim has exactly one fetched url
        let expected = recs
            .iter()
            .filter(|r| r.image_urls.iter().any(|u| report.fetched(u).is_some()))
            .count();
        assert_eq!(out.len(), 10);
        assert_eq!(out.len(), expected);
        assert!(out.iter().all(|r| r.image_urls.len() == 1));
    }

    #[test]
    fn finfact_conversion_splits_sentences() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x.jpg"), b"img").unwrap();
        let mut report = DownloadReport::default();
        report.insert("http://img/0/0", DownloadOutcome::Fetched { path: "x.jpg".into() });
        let recs = sanitize_finfact(&[raw(0, 1), raw(1, 0)], &report);
        let (claims, ks) = finfact_to_canonical(&recs, &report, dir.path()).unwrap();
        assert_eq!(claims.len(), 2);
        assert_eq!(claims[0].gold_verdict, Verdict::Supported);
        assert_eq!(claims[1].gold_verdict, Verdict::Refuted);
        assert_eq!(claims[0].gold_text_evidence, vec!["ff0-t0", "ff0-t1"]);
        assert_eq!(claims[0].gold_image_evidence, vec!["ff0-i0"]);
        assert_eq!(ks.text_items().count(), 4);
        assert_eq!(ks.image_items().count(), 1);
    }

    #[test]
    fn sentence_splitter() {
        assert_eq!(
            split_sentences("Mr. Smith went. It cost 3.5 dollars! Really? yes"),
            vec!["Mr.", "Smith went.", "It cost 3.5 dollars!", "Really?", "yes"]
        );
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn annotations_load_and_reject_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        fs::write(&p, "").unwrap();
        assert!(load_annotations(&p).unwrap().is_empty());
        fs::write(
            &p,
            "{\"claim_id\":\"c1\",\"annotator_id\":\"a\",\"necessity_label\":\"Necessary\",\"claim_category\":\"VisualSuccessful\"}\n{\"claim_id\":\"c1\",\"annotator_id\":\"a\",\"necessity_label\":\"Unnecessary\"}\n",
        )
        .unwrap();
        assert!(matches!(
            load_annotations(&p),
            Err(CorpusError::DuplicateAnnotation { .. })
        ));
        fs::write(
            &p,
            "{\"claim_id\":\"c1\",\"annotator_id\":\"a\",\"necessity_label\":\"Sometimes\"}\n",
        )
        .unwrap();
        assert!(matches!(
            load_annotations(&p),
            Err(CorpusError::SchemaViolation { ref field, .. }) if field == "necessity_label"
        ));
    }
}
