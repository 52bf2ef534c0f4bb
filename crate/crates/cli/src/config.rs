//! The declarative run configuration (TOML or JSON).

use std::path::{Path, PathBuf};

use factcheck::agents::DecodingParams;
use factcheck::corpus::FormatTag;
use factcheck::pipeline::{EvidenceConfig, Strategy, TextSource, ConfigKind, DEFAULT_TAU};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Http,
    Scripted,
}

/// One model or embedding endpoint. Secrets are read from `auth_env_var`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendEntry {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub auth_env_var: Option<String>,
    #[serde(default)]
    pub decoding: Option<DecodingParams>,
    #[serde(default)]
    pub timeout_s: Option<f64>,
    /// Scripted chat backends: transcript to replay.
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    /// Scripted embedders: JSONL of `{input, vector}`.
    #[serde(default)]
    pub vectors: Option<PathBuf>,
}

impl BackendEntry {
    pub fn display_name(&self, role: &str) -> String {
        self.name.clone().unwrap_or_else(|| role.to_string())
    }

    pub fn model(&self) -> String {
        self.model_id.clone().unwrap_or_default()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backends {
    #[serde(default)]
    pub analyzer: Option<BackendEntry>,
    #[serde(default)]
    pub verifier: Option<BackendEntry>,
    #[serde(default)]
    pub embedder_text: Option<BackendEntry>,
    #[serde(default)]
    pub embedder_image: Option<BackendEntry>,
    #[serde(default)]
    pub summarizer: Option<BackendEntry>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchEntry {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub auth_env_var: Option<String>,
    /// Scripted: JSON object of query → results.
    #[serde(default)]
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FetchEntry {
    #[serde(default)]
    pub kind: BackendKind,
    /// Scripted: JSONL of pages.
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    #[serde(default = "default_per_host")]
    pub max_per_host: usize,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default)]
    pub timeout_s: Option<f64>,
}

fn default_per_host() -> usize {
    2
}

impl Default for FetchEntry {
    fn default() -> Self {
        Self {
            kind: BackendKind::Http,
            fixture: None,
            max_per_host: default_per_host(),
            delay_ms: 0,
            timeout_s: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WebFcConfig {
    #[serde(default)]
    pub search: SearchEntry,
    #[serde(default)]
    pub fetch: FetchEntry,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<FormatTag>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub strategies: Vec<String>,
    #[serde(default)]
    pub configs: Vec<String>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub strict: bool,
    /// Transcripts replayed by scripted chat backends without their own.
    #[serde(default)]
    pub transcripts: Vec<PathBuf>,
    #[serde(default)]
    pub text_index: Option<PathBuf>,
    #[serde(default)]
    pub image_index: Option<PathBuf>,
    #[serde(default)]
    pub backends: Backends,
    #[serde(default)]
    pub webfc: Option<WebFcConfig>,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Parse by extension: `.json` as JSON, anything else as TOML.
    /// Relative paths are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        } else {
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        rebase(base, &mut self.dataset);
        rebase(base, &mut self.out);
        rebase(base, &mut self.text_index);
        rebase(base, &mut self.image_index);
        for t in &mut self.transcripts {
            if t.is_relative() {
                *t = base.join(&*t);
            }
        }
        let b = &mut self.backends;
        for e in [&mut b.analyzer, &mut b.verifier, &mut b.embedder_text, &mut b.embedder_image, &mut b.summarizer]
            .into_iter()
            .flatten()
        {
            rebase(base, &mut e.transcript);
            rebase(base, &mut e.vectors);
        }
        if let Some(w) = &mut self.webfc {
            rebase(base, &mut w.search.fixture);
            rebase(base, &mut w.fetch.fixture);
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(DEFAULT_TAU)
    }

    pub fn parsed_strategies(&self) -> Result<Vec<Strategy>, String> {
        let names: Vec<&str> = if self.strategies.is_empty() {
            vec!["amufc"]
        } else {
            self.strategies.iter().map(String::as_str).collect()
        };
        names.into_iter().map(|n| Strategy::parse(n, self.tau())).collect()
    }

    pub fn parsed_configs(&self) -> Result<Vec<EvidenceConfig>, String> {
        if self.configs.is_empty() {
            return Ok(vec![EvidenceConfig::new(ConfigKind::GoldImage, TextSource::Gold)]);
        }
        self.configs.iter().map(|c| c.parse()).collect()
    }

    /// Checks that every requested strategy and configuration has what it needs.
    pub fn validate_run(&self) -> Result<(Vec<Strategy>, Vec<EvidenceConfig>), String> {
        let tau = self.tau();
        if !(-1.0..=1.0).contains(&tau) {
            return Err(format!("tau must lie in [-1, 1], got {tau}"));
        }
        if self.dataset.is_none() {
            return Err("no dataset configured".into());
        }
        let strategies = self.parsed_strategies()?;
        let configs = self.parsed_configs()?;
        let b = &self.backends;
        if b.verifier.is_none() {
            return Err("missing backend `verifier`".into());
        }
        for s in &strategies {
            if s.needs_analyzer() && b.analyzer.is_none() {
                return Err(format!("strategy {} requires backend `analyzer`", s.name()));
            }
            if s.needs_threshold_scorer() && b.embedder_image.is_none() {
                return Err(format!("strategy {} requires backend `embedder_image`", s.name()));
            }
        }
        for c in &configs {
            if c.kind == ConfigKind::Oracle {
                return Err("the oracle configuration is composed by `eval --oracle`, not run".into());
            }
            if c.text_source == TextSource::Retrieved {
                if b.embedder_text.is_none() {
                    return Err(format!("configuration {c} requires backend `embedder_text`"));
                }
                if self.text_index.is_none() {
                    return Err(format!("configuration {c} requires `text_index`"));
                }
            }
            if c.kind == ConfigKind::RetrievedImage {
                if b.embedder_image.is_none() {
                    return Err(format!("configuration {c} requires backend `embedder_image`"));
                }
                if self.image_index.is_none() {
                    return Err(format!("configuration {c} requires `image_index`"));
                }
            }
        }
        Ok((strategies, configs))
    }
}
