//! Building temporally sound web evidence sets.
//!
//! Each seed claim is searched, its top documents fetched and dated, and
//! everything published on or after the claim's fact-check date dropped.
//! Claims whose top results mostly fail to load are rejected. Surviving
//! documents are summarized and written out in the canonical corpus schema.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rayon::prelude::*;
use regex::Regex;
use scraper::{ElementRef, Html, Selector};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::agents::{chat_complete, render_summarizer_prompt, AgentRole, Transcript};
use crate::corpus::{parse_date, save_dataset, ClaimRecord, CorpusError, EvidenceItem, KnowledgeSource};
use crate::jsonl;
use crate::pipeline::Agent;

/// Documents requested per claim.
pub const TOP_DOCS: usize = 10;
/// A claim is rejected when more than this many of its top URLs fail.
pub const MAX_FAILED_URLS: usize = 8;
pub const REPORT_FILE: &str = "build_report.json";

#[derive(Debug, Error)]
pub enum WebError {
    #[error("search failed: {0}")]
    Search(String),
    #[error("search quota exceeded")]
    QuotaExceeded,
    #[error("fetch failed for {url}: {reason}")]
    Fetch { url: String, reason: String },
    #[error("no claim was admitted")]
    NothingAdmitted,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = WebError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub q: String,
    pub num: usize,
    /// Ask the engine for results published before this date.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_restrict: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawHit {
    pub url: String,
    /// Date as reported by the engine, unparsed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResults {
    #[serde(default)]
    pub documents: Vec<RawHit>,
    #[serde(default)]
    pub images: Vec<RawHit>,
}

pub trait SearchBackend: Send + Sync {
    fn search(&self, query: &SearchQuery) -> Result<SearchResults>;
}

/// JSON search endpoint: POST `{q, num, date_restrict}`, reply `{documents, images}`.
pub struct HttpSearch {
    url: String,
    auth: Option<String>,
    agent: ureq::Agent,
}

impl HttpSearch {
    pub fn new(url: impl Into<String>, auth: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            auth,
            agent,
        }
    }
}

impl SearchBackend for HttpSearch {
    fn search(&self, query: &SearchQuery) -> Result<SearchResults> {
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.auth {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(query)
            .map_err(|e| WebError::Search(e.to_string()))?;
        match resp.status().as_u16() {
            429 => return Err(WebError::QuotaExceeded),
            s if !(200..300).contains(&s) => return Err(WebError::Search(format!("status {s}"))),
            _ => {}
        }
        resp.body_mut()
            .read_json()
            .map_err(|e| WebError::Search(e.to_string()))
    }
}

/// Canned results keyed by query text.
#[derive(Debug, Clone, Default)]
pub struct ScriptedSearch {
    results: HashMap<String, SearchResults>,
}

impl ScriptedSearch {
    pub fn new(results: HashMap<String, SearchResults>) -> Self {
        Self { results }
    }

    /// A JSON object mapping query text to `{documents, images}`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| WebError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let results = serde_json::from_str(&text).map_err(|e| WebError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?;
        Ok(Self { results })
    }
}

impl SearchBackend for ScriptedSearch {
    fn search(&self, query: &SearchQuery) -> Result<SearchResults> {
        let mut r = self
            .results
            .get(&query.q)
            .cloned()
            .ok_or_else(|| WebError::Search(format!("no scripted results for {:?}", query.q)))?;
        r.documents.truncate(query.num);
        r.images.truncate(1);
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetched {
    pub body: Vec<u8>,
    pub content_type: Option<String>,
}

pub trait Fetcher: Send + Sync {
    fn fetch(&self, url: &str) -> Result<Fetched>;
}

#[derive(Default)]
struct HostSlot {
    active: usize,
    next_start: Option<Instant>,
}

/// Caps concurrent requests per host and spaces their start times.
struct HostGate {
    slots: Mutex<HashMap<String, HostSlot>>,
    freed: Condvar,
    max_per_host: usize,
    delay: Duration,
}

struct HostPermit<'a> {
    gate: &'a HostGate,
    host: String,
}

impl HostGate {
    fn acquire(&self, host: &str) -> HostPermit<'_> {
        let mut slots = self.slots.lock().expect("host gate poisoned");
        loop {
            let now = Instant::now();
            let slot = slots.entry(host.to_string()).or_default();
            let ready = slot.next_start.is_none_or(|t| now >= t);
            if slot.active < self.max_per_host && ready {
                slot.active += 1;
                slot.next_start = Some(now + self.delay);
                break;
            }
            let wait = slot
                .next_start
                .filter(|_| slot.active < self.max_per_host)
                .map(|t| t.saturating_duration_since(now))
                .unwrap_or(Duration::from_millis(50));
            slots = self
                .freed
                .wait_timeout(slots, wait.max(Duration::from_millis(1)))
                .expect("host gate poisoned")
                .0;
        }
        HostPermit {
            gate: self,
            host: host.to_string(),
        }
    }
}

impl Drop for HostPermit<'_> {
    fn drop(&mut self) {
        let mut slots = self.gate.slots.lock().expect("host gate poisoned");
        if let Some(s) = slots.get_mut(&self.host) {
            s.active -= 1;
        }
        self.gate.freed.notify_all();
    }
}

pub struct HttpFetcher {
    agent: ureq::Agent,
    gate: HostGate,
}

impl HttpFetcher {
    pub fn new(timeout: Duration, max_per_host: usize, delay: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            gate: HostGate {
                slots: Mutex::new(HashMap::new()),
                freed: Condvar::new(),
                max_per_host: max_per_host.max(1),
                delay,
            },
        }
    }
}

impl Fetcher for HttpFetcher {
    fn fetch(&self, url: &str) -> Result<Fetched> {
        let fail = |reason: String| WebError::Fetch {
            url: url.to_string(),
            reason,
        };
        let parsed = url::Url::parse(url).map_err(|e| fail(e.to_string()))?;
        let host = parsed.host_str().unwrap_or_default().to_string();
        let _permit = self.gate.acquire(&host);
        let mut resp = self.agent.get(url).call().map_err(|e| fail(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(fail(format!("status {status}")));
        }
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = resp
            .body_mut()
            .with_config()
            .limit(20 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| fail(e.to_string()))?;
        Ok(Fetched { body, content_type })
    }
}

/// One line of a scripted fetch fixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedPage {
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub html: Option<String>,
    /// Binary body, relative to the fixture file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_type: Option<String>,
    #[serde(default)]
    pub fail: bool,
}

/// Serves canned bodies; unknown URLs fail.
#[derive(Debug, Clone, Default)]
pub struct ScriptedFetcher {
    pages: HashMap<String, Option<Fetched>>,
}

impl ScriptedFetcher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn page(mut self, url: impl Into<String>, html: impl Into<String>) -> Self {
        self.pages.insert(
            url.into(),
            Some(Fetched {
                body: html.into().into_bytes(),
                content_type: Some("text/html".into()),
            }),
        );
        self
    }

    pub fn bytes(mut self, url: impl Into<String>, body: Vec<u8>, content_type: &str) -> Self {
        self.pages.insert(
            url.into(),
            Some(Fetched {
                body,
                content_type: Some(content_type.into()),
            }),
        );
        self
    }

    pub fn failing(mut self, url: impl Into<String>) -> Self {
        self.pages.insert(url.into(), None);
        self
    }

    /// Reads a JSONL file of [`ScriptedPage`] lines.
    pub fn load(path: &Path) -> Result<Self> {
        let io = |source| WebError::Io {
            path: path.to_path_buf(),
            source,
        };
        let text = fs::read_to_string(path).map_err(io)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut out = Self::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let page: ScriptedPage = serde_json::from_str(line)
                .map_err(|e| io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
            out = match (page.fail, page.html, page.file) {
                (true, _, _) => out.failing(page.url),
                (false, Some(html), _) => out.page(page.url, html),
                (false, None, Some(file)) => {
                    let body = fs::read(base.join(&file)).map_err(io)?;
                    let ct = page.content_type.unwrap_or_else(|| "application/octet-stream".into());
                    out.bytes(page.url, body, &ct)
                }
                (false, None, None) => out.failing(page.url),
            };
        }
        Ok(out)
    }
}

impl Fetcher for ScriptedFetcher {
    fn fetch(&self, url: &str) -> Result<Fetched> {
        match self.pages.get(url) {
            Some(Some(f)) => Ok(f.clone()),
            Some(None) => Err(WebError::Fetch {
                url: url.into(),
                reason: "scripted failure".into(),
            }),
            None => Err(WebError::Fetch {
                url: url.into(),
                reason: "not in fixture".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitStatus {
    Ok,
    FetchFailed,
    ParseFailed,
    Undated,
}

impl HitStatus {
    pub fn is_failure(self) -> bool {
        matches!(self, HitStatus::FetchFailed | HitStatus::ParseFailed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DateSource {
    Search,
    MetaTag,
    Dateline,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WebHit {
    pub url: String,
    pub fetched_html: Option<String>,
    /// Present only when `status` is `Ok`.
    pub extracted_text: Option<String>,
    pub publish_date: Option<NaiveDate>,
    pub date_source: Option<DateSource>,
    pub status: HitStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageHit {
    pub url: String,
    pub body: Vec<u8>,
    pub extension: String,
    pub publish_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchBundle {
    pub claim_id: String,
    pub cutoff_date: NaiveDate,
    pub doc_hits: Vec<WebHit>,
    pub image_hit: Option<ImageHit>,
}

/// Query the engine for up to [`TOP_DOCS`] documents and one image.
pub fn search_claim(claim: &ClaimRecord, search: &dyn SearchBackend) -> Result<SearchResults> {
    let cutoff = claim
        .factcheck_date
        .ok_or_else(|| WebError::Search(format!("claim {} has no fact-check date", claim.claim_id)))?;
    let mut r = search.search(&SearchQuery {
        q: claim.text.clone(),
        num: TOP_DOCS,
        date_restrict: Some(cutoff),
    })?;
    r.documents.truncate(TOP_DOCS);
    r.images.truncate(1);
    Ok(r)
}

fn selector(css: &str) -> Selector {
    Selector::parse(css).expect("static selector")
}

fn meta_date(doc: &Html) -> Option<NaiveDate> {
    static SELS: OnceLock<Vec<Selector>> = OnceLock::new();
    let sels = SELS.get_or_init(|| {
        [
            r#"meta[property="article:published_time"]"#,
            r#"meta[name="article:published_time"]"#,
            r#"meta[itemprop="datePublished"]"#,
            r#"meta[name="datePublished"]"#,
        ]
        .into_iter()
        .map(selector)
        .collect()
    });
    for sel in sels {
        if let Some(d) = doc
            .select(sel)
            .filter_map(|e| e.value().attr("content"))
            .find_map(parse_date)
        {
            return Some(d);
        }
    }
    if let Some(d) = doc
        .select(&selector(r#"time[itemprop="datePublished"]"#))
        .filter_map(|e| e.value().attr("datetime"))
        .find_map(parse_date)
    {
        return Some(d);
    }
    static LD: OnceLock<Regex> = OnceLock::new();
    let ld = LD.get_or_init(|| Regex::new(r#""datePublished"\s*:\s*"([^"]+)""#).unwrap());
    doc.select(&selector(r#"script[type="application/ld+json"]"#))
        .flat_map(|s| s.text().map(str::to_string).collect::<Vec<_>>())
        .find_map(|t| ld.captures(&t).and_then(|c| parse_date(&c[1])))
}

/// First date written out in running text, e.g. "March 3, 2024" or "3 March 2024".
pub fn dateline_date(text: &str) -> Option<NaiveDate> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        let month = r"(?:Jan|Feb|Mar|Apr|May|Jun|Jul|Aug|Sep|Sept|Oct|Nov|Dec)[a-z]*\.?";
        Regex::new(&format!(
            r"\b(?:{month}\s+\d{{1,2}},?\s+\d{{4}}|\d{{1,2}}\s+{month}\s+\d{{4}}|\d{{4}}-\d{{2}}-\d{{2}})\b"
        ))
        .unwrap()
    });
    re.find_iter(text).find_map(|m| {
        let s = m.as_str().replace(['.', ','], "").replace("Sept", "Sep");
        let s = s.split_whitespace().collect::<Vec<_>>().join(" ");
        ["%B %d %Y", "%b %d %Y", "%d %B %Y", "%d %b %Y", "%Y-%m-%d"]
            .iter()
            .find_map(|f| NaiveDate::parse_from_str(&s, f).ok())
    })
}

const SKIP_TAGS: [&str; 9] = [
    "script", "style", "nav", "header", "footer", "aside", "form", "noscript", "figcaption",
];

fn in_boilerplate(e: &ElementRef) -> bool {
    e.ancestors()
        .filter_map(ElementRef::wrap)
        .any(|a| SKIP_TAGS.contains(&a.value().name()))
}

fn clean(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Main-content text: paragraphs of the block holding the most paragraph
/// text, ignoring navigation and other page furniture.
pub fn extract_main_text(doc: &Html) -> Option<String> {
    let p_sel = selector("p");
    let mut by_parent: BTreeMap<usize, (usize, Vec<String>)> = BTreeMap::new();
    let mut order = HashMap::new();
    for p in doc.select(&p_sel) {
        if in_boilerplate(&p) {
            continue;
        }
        let text = clean(&p.text().collect::<String>());
        if text.len() < 25 {
            continue;
        }
        let link_chars: usize = p
            .select(&selector("a"))
            .map(|a| a.text().map(str::len).sum::<usize>())
            .sum();
        if link_chars * 2 > text.len() {
            continue;
        }
        let Some(parent) = p.parent() else { continue };
        let next = order.len();
        let key = *order.entry(parent.id()).or_insert(next);
        let slot = by_parent.entry(key).or_default();
        slot.0 += text.len();
        slot.1.push(text);
    }
    let best = by_parent
        .into_values()
        .max_by(|a, b| a.0.cmp(&b.0))
        .map(|(_, ps)| ps.join("\n\n"));
    best.filter(|t| !t.is_empty()).or_else(|| {
        let body = doc.select(&selector("body")).next()?;
        let text: String = body
            .descendants()
            .filter_map(|n| n.value().as_text().map(|t| (n, t)))
            .filter(|(n, _)| {
                !n.ancestors()
                    .filter_map(ElementRef::wrap)
                    .any(|a| SKIP_TAGS.contains(&a.value().name()))
            })
            .map(|(_, t)| t.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        let text = clean(&text);
        (!text.is_empty()).then_some(text)
    })
}

/// Dates and extracts one fetched page. Date order: search metadata, meta
/// tags, then the first dateline in the extracted text.
pub fn process_page(url: &str, search_date: Option<&str>, html: &str) -> WebHit {
    let doc = Html::parse_document(html);
    let text = extract_main_text(&doc);
    let (publish_date, date_source) = match search_date.and_then(parse_date) {
        Some(d) => (Some(d), Some(DateSource::Search)),
        None => match meta_date(&doc) {
            Some(d) => (Some(d), Some(DateSource::MetaTag)),
            None => match text.as_deref().and_then(dateline_date) {
                Some(d) => (Some(d), Some(DateSource::Dateline)),
                None => (None, None),
            },
        },
    };
    let status = match (&text, publish_date) {
        (None, _) => HitStatus::ParseFailed,
        (Some(_), None) => HitStatus::Undated,
        (Some(_), Some(_)) => HitStatus::Ok,
    };
    WebHit {
        url: url.to_string(),
        fetched_html: Some(html.to_string()),
        extracted_text: text.filter(|_| status == HitStatus::Ok),
        publish_date,
        date_source,
        status,
    }
}

fn fetch_doc(hit: &RawHit, fetcher: &dyn Fetcher) -> WebHit {
    match fetcher.fetch(&hit.url) {
        Ok(f) => match String::from_utf8(f.body) {
            Ok(html) => process_page(&hit.url, hit.date.as_deref(), &html),
            Err(_) => WebHit {
                url: hit.url.clone(),
                fetched_html: None,
                extracted_text: None,
                publish_date: None,
                date_source: None,
                status: HitStatus::ParseFailed,
            },
        },
        Err(e) => {
            warn!(url = %hit.url, error = %e, "fetch failed");
            WebHit {
                url: hit.url.clone(),
                fetched_html: None,
                extracted_text: None,
                publish_date: None,
                date_source: None,
                status: HitStatus::FetchFailed,
            }
        }
    }
}

fn image_extension(url: &str, content_type: Option<&str>) -> String {
    let from_ct = content_type.and_then(|ct| match ct.split(';').next()?.trim() {
        "image/png" => Some("png"),
        "image/jpeg" | "image/jpg" => Some("jpg"),
        "image/gif" => Some("gif"),
        "image/webp" => Some("webp"),
        _ => None,
    });
    let from_url = url::Url::parse(url).ok().and_then(|u| {
        let ext = Path::new(u.path()).extension()?.to_str()?.to_ascii_lowercase();
        ["png", "jpg", "jpeg", "gif", "webp"]
            .contains(&ext.as_str())
            .then_some(ext)
    });
    from_ct
        .map(str::to_string)
        .or(from_url)
        .unwrap_or_else(|| "jpg".into())
}

/// Search, then fetch and date every hit.
pub fn gather(claim: &ClaimRecord, search: &dyn SearchBackend, fetcher: &dyn Fetcher) -> Result<SearchBundle> {
    let results = search_claim(claim, search)?;
    let cutoff_date = claim.factcheck_date.expect("checked by search_claim");
    let doc_hits = results.documents.iter().map(|h| fetch_doc(h, fetcher)).collect();
    let image_hit = results.images.first().and_then(|h| match fetcher.fetch(&h.url) {
        Ok(f) => Some(ImageHit {
            extension: image_extension(&h.url, f.content_type.as_deref()),
            url: h.url.clone(),
            body: f.body,
            publish_date: h.date.as_deref().and_then(parse_date),
        }),
        Err(e) => {
            warn!(url = %h.url, error = %e, "image fetch failed");
            None
        }
    });
    Ok(SearchBundle {
        claim_id: claim.claim_id.clone(),
        cutoff_date,
        doc_hits,
        image_hit,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub undated: usize,
    pub post_cutoff: usize,
}

/// Keep hits dated strictly before `cutoff`. Undated hits are dropped and counted.
pub fn apply_temporal_filter(hits: Vec<WebHit>, cutoff: NaiveDate) -> (Vec<WebHit>, FilterCounts) {
    let mut counts = FilterCounts::default();
    let kept = hits
        .into_iter()
        .filter(|h| match h.publish_date {
            None => {
                counts.undated += 1;
                false
            }
            Some(d) if d >= cutoff => {
                counts.post_cutoff += 1;
                false
            }
            Some(_) => true,
        })
        .collect();
    (kept, counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Admission {
    Admit,
    Reject,
}

/// Failed fetches or parses among the top results.
pub fn failed_urls(bundle: &SearchBundle) -> usize {
    bundle
        .doc_hits
        .iter()
        .take(TOP_DOCS)
        .filter(|h| h.status.is_failure())
        .count()
}

pub fn admit_claim(bundle: &SearchBundle) -> Admission {
    if failed_urls(bundle) > MAX_FAILED_URLS {
        Admission::Reject
    } else {
        Admission::Admit
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Summaries {
    /// (hit, summary) for every summarized document, in hit order.
    pub docs: Vec<(WebHit, String)>,
    pub empty_skipped: usize,
    pub failed: usize,
}

/// One paragraph per retained document. Empty extractions and backend
/// failures skip the document.
pub fn summarize_documents(hits: &[WebHit], agent: &Agent, transcript: &Transcript) -> Summaries {
    let mut out = Summaries::default();
    for h in hits {
        let text = h.extracted_text.as_deref().unwrap_or("");
        let msg = match render_summarizer_prompt(text) {
            Ok(m) => m,
            Err(_) => {
                out.empty_skipped += 1;
                continue;
            }
        };
        match chat_complete(agent.backend.as_ref(), AgentRole::Summarizer, msg, &agent.decoding, transcript) {
            Ok(c) if !c.text.trim().is_empty() => out.docs.push((h.clone(), c.text.trim().to_string())),
            Ok(_) => out.empty_skipped += 1,
            Err(e) => {
                warn!(url = %h.url, error = %e, "summarization failed");
                out.failed += 1;
            }
        }
    }
    out
}

/// Outcome for one seed claim.
#[derive(Debug, Clone)]
pub struct ClaimBuild {
    pub claim: ClaimRecord,
    pub admission: Admission,
    pub reason: Option<String>,
    pub summaries: Vec<(WebHit, String)>,
    pub image: Option<ImageHit>,
    pub failed_fetches: usize,
    pub filter: FilterCounts,
    pub empty_skipped: usize,
    pub summary_failures: usize,
    pub image_dropped: usize,
}

impl ClaimBuild {
    fn rejected(claim: &ClaimRecord, reason: String) -> Self {
        Self {
            claim: claim.clone(),
            admission: Admission::Reject,
            reason: Some(reason),
            summaries: Vec::new(),
            image: None,
            failed_fetches: 0,
            filter: FilterCounts::default(),
            empty_skipped: 0,
            summary_failures: 0,
            image_dropped: 0,
        }
    }
}

pub struct WebFcBuilder<'a> {
    pub search: &'a dyn SearchBackend,
    pub fetcher: &'a dyn Fetcher,
    pub summarizer: Agent,
    pub parallelism: usize,
}

impl WebFcBuilder<'_> {
    pub fn build_claim(&self, claim: &ClaimRecord, transcript: &Transcript) -> ClaimBuild {
        let Some(cutoff) = claim.factcheck_date else {
            return ClaimBuild::rejected(claim, "missing factcheck_date".into());
        };
        let bundle = match gather(claim, self.search, self.fetcher) {
            Ok(b) => b,
            Err(e) => return ClaimBuild::rejected(claim, e.to_string()),
        };
        let failed = failed_urls(&bundle);
        if admit_claim(&bundle) == Admission::Reject {
            let mut b = ClaimBuild::rejected(
                claim,
                format!("{failed} of {} top URLs failed", bundle.doc_hits.len()),
            );
            b.failed_fetches = failed;
            return b;
        }
        let ok_docs: Vec<WebHit> = bundle
            .doc_hits
            .into_iter()
            .filter(|h| !h.status.is_failure())
            .collect();
        let (kept, filter) = apply_temporal_filter(ok_docs, cutoff);
        let had_image = bundle.image_hit.is_some();
        let image = bundle
            .image_hit
            .filter(|i| i.publish_date.is_some_and(|d| d < cutoff));
        let image_dropped = usize::from(had_image && image.is_none());
        let s = summarize_documents(&kept, &self.summarizer, transcript);
        ClaimBuild {
            claim: claim.clone(),
            admission: Admission::Admit,
            reason: None,
            summaries: s.docs,
            image,
            failed_fetches: failed,
            filter,
            empty_skipped: s.empty_skipped,
            summary_failures: s.failed,
            image_dropped,
        }
    }

    /// Build every seed in parallel; results come back in claim-id order.
    pub fn build(&self, seeds: &[ClaimRecord], transcript: &Transcript) -> Vec<ClaimBuild> {
        let mut ordered: Vec<&ClaimRecord> = seeds.iter().collect();
        ordered.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism.max(1))
            .build()
            .expect("thread pool");
        pool.install(|| {
            ordered
                .par_iter()
                .map(|c| self.build_claim(c, transcript))
                .collect()
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub admitted: usize,
    pub rejected: usize,
    pub undated_dropped: usize,
    pub failed_fetches: usize,
    /// Dropped by the post-hoc date check despite the engine-side restriction.
    pub post_cutoff_dropped: usize,
    pub empty_extractions: usize,
    pub summary_failures: usize,
    /// Image hits dropped for lacking a date before the cutoff.
    pub images_dropped: usize,
    /// Rejection reason per claim id.
    pub reasons: BTreeMap<String, String>,
}

/// Write admitted claims and their evidence under `out_dir` in the
/// canonical schema, plus `build_report.json`.
pub fn emit_webfc(builds: &[ClaimBuild], out_dir: &Path) -> Result<BuildReport> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| WebError::Io { path, source }
    };
    let mut report = BuildReport::default();
    let mut claims = Vec::new();
    let mut items = Vec::new();
    let img_dir = out_dir.join("images");
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;

    for b in builds {
        report.failed_fetches += b.failed_fetches;
        report.undated_dropped += b.filter.undated;
        report.post_cutoff_dropped += b.filter.post_cutoff;
        report.empty_extractions += b.empty_skipped;
        report.summary_failures += b.summary_failures;
        report.images_dropped += b.image_dropped;
        if b.admission == Admission::Reject {
            report.rejected += 1;
            report.reasons.insert(
                b.claim.claim_id.clone(),
                b.reason.clone().unwrap_or_else(|| "rejected".into()),
            );
            continue;
        }
        report.admitted += 1;
        let cid = &b.claim.claim_id;
        let mut claim = b.claim.clone();
        claim.gold_text_evidence.clear();
        claim.gold_image_evidence.clear();
        for (j, (hit, summary)) in b.summaries.iter().enumerate() {
            let id = format!("{cid}-d{}", j + 1);
            let mut item = EvidenceItem::text(&id, summary);
            item.provenance_url = Some(hit.url.clone());
            item.publish_date = hit.publish_date;
            items.push(item);
            claim.gold_text_evidence.push(id);
        }
        if let Some(img) = &b.image {
            let rel = PathBuf::from("images").join(format!("{cid}.{}", img.extension));
            fs::create_dir_all(&img_dir).map_err(io(&img_dir))?;
            let dst = out_dir.join(&rel);
            jsonl::write_atomic(&dst, &img.body).map_err(io(&dst))?;
            let id = format!("{cid}-img");
            let mut item = EvidenceItem::image(&id, rel);
            item.provenance_url = Some(img.url.clone());
            item.publish_date = img.publish_date;
            items.push(item);
            claim.gold_image_evidence.push(id);
        }
        claims.push(claim);
    }

    let body = serde_json::to_vec_pretty(&report).expect("report serializes");
    let rpath = out_dir.join(REPORT_FILE);
    jsonl::write_atomic(&rpath, &body).map_err(io(&rpath))?;
    if claims.is_empty() {
        return Err(WebError::NothingAdmitted);
    }
    let ks = KnowledgeSource::from_items(out_dir, items)?;
    save_dataset(out_dir, &claims, &ks)?;
    Ok(report)
}
