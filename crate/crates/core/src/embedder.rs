//! Pluggable embedding backends.
//!
//! The wire contract is a JSON POST of `{inputs: [..], modality}` answered
//! with `{vectors: [[f32]]}`. Image inputs travel as file paths the server
//! can read. [`ScriptedEmbedder`] serves fixed vectors from a JSON-lines
//! file of `{input, vector}` records.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EmbedInput {
    Text(String),
    Image(PathBuf),
}

impl EmbedInput {
    pub fn as_wire(&self) -> String {
        match self {
            EmbedInput::Text(s) => s.clone(),
            EmbedInput::Image(p) => p.to_string_lossy().into_owned(),
        }
    }

    fn modality(&self) -> &'static str {
        match self {
            EmbedInput::Text(_) => "text",
            EmbedInput::Image(_) => "image",
        }
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no scripted vector for input #{index}: {input:?}")]
    Miss { index: usize, input: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("http status {0}")]
    Status(u16),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EmbedError {
    /// Position of the offending input within the request, when known.
    pub fn input_index(&self) -> Option<usize> {
        match self {
            EmbedError::Miss { index, .. } => Some(*index),
            _ => None,
        }
    }
}

pub trait Embedder: Send + Sync {
    /// Names the model, recorded in every index built with it.
    fn tag(&self) -> &str;

    fn embed(&self, inputs: &[EmbedInput]) -> Result<Vec<Vec<f32>>, EmbedError>;

    fn embed_one(&self, input: EmbedInput) -> Result<Vec<f32>, EmbedError> {
        self.embed(std::slice::from_ref(&input))?
            .pop()
            .ok_or_else(|| EmbedError::Protocol("empty response".into()))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    inputs: Vec<String>,
    modality: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

pub struct HttpEmbedder {
    tag: String,
    url: String,
    auth: Option<String>,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(tag: impl Into<String>, url: impl Into<String>, auth: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            tag: tag.into(),
            url: url.into(),
            auth,
            agent,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed(&self, inputs: &[EmbedInput]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let Some(first) = inputs.first() else {
            return Ok(Vec::new());
        };
        if inputs.iter().any(|i| i.modality() != first.modality()) {
            return Err(EmbedError::Protocol("mixed modalities in one request".into()));
        }
        let body = EmbedRequest {
            inputs: inputs.iter().map(EmbedInput::as_wire).collect(),
            modality: first.modality(),
        };
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.auth {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(EmbedError::Status(status));
        }
        let parsed: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::Protocol(e.to_string()))?;
        if parsed.vectors.len() != inputs.len() {
            return Err(EmbedError::Protocol(format!(
                "{} inputs but {} vectors",
                inputs.len(),
                parsed.vectors.len()
            )));
        }
        Ok(parsed.vectors)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedVector {
    pub input: String,
    pub vector: Vec<f32>,
}

/// Fixed vectors keyed by input string. Image inputs also match a key that
/// is a trailing path suffix of the requested path.
#[derive(Debug, Clone)]
pub struct ScriptedEmbedder {
    tag: String,
    table: HashMap<String, Vec<f32>>,
}

impl ScriptedEmbedder {
    pub fn from_pairs<K: Into<String>>(
        tag: impl Into<String>,
        pairs: impl IntoIterator<Item = (K, Vec<f32>)>,
    ) -> Self {
        Self {
            tag: tag.into(),
            table: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn load(tag: impl Into<String>, path: &Path) -> Result<Self, EmbedError> {
        let text = fs::read_to_string(path).map_err(|source| EmbedError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut table = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ScriptedVector = serde_json::from_str(line)
                .map_err(|e| EmbedError::Protocol(format!("{}:{}: {e}", path.display(), i + 1)))?;
            table.insert(rec.input, rec.vector);
        }
        Ok(Self {
            tag: tag.into(),
            table,
        })
    }

    fn lookup(&self, input: &EmbedInput) -> Option<&Vec<f32>> {
        let key = input.as_wire();
        if let Some(v) = self.table.get(&key) {
            return Some(v);
        }
        let EmbedInput::Image(path) = input else {
            return None;
        };
        // Deterministic choice among suffix matches: the longest key wins.
        self.table
            .iter()
            .filter(|(k, _)| path.ends_with(Path::new(k.as_str())))
            .max_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| b.0.cmp(a.0)))
            .map(|(_, v)| v)
    }
}

impl Embedder for ScriptedEmbedder {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn embed(&self, inputs: &[EmbedInput]) -> Result<Vec<Vec<f32>>, EmbedError> {
        inputs
            .iter()
            .enumerate()
            .map(|(index, input)| {
                self.lookup(input).cloned().ok_or_else(|| EmbedError::Miss {
                    index,
                    input: input.as_wire(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_lookup_by_text_and_path_suffix() {
        let e = ScriptedEmbedder::from_pairs(
            "s",
            [("hello", vec![1.0]), ("images/a.jpg", vec![2.0]), ("a.jpg", vec![3.0])],
        );
        assert_eq!(e.embed_one(EmbedInput::Text("hello".into())).unwrap(), vec![1.0]);
        assert_eq!(
            e.embed_one(EmbedInput::Image("/data/set/images/a.jpg".into())).unwrap(),
            vec![2.0]
        );
        assert!(matches!(
            e.embed(&[EmbedInput::Text("hello".into()), EmbedInput::Text("bye".into())]),
            Err(EmbedError::Miss { index: 1, .. })
        ));
    }

    #[test]
    fn scripted_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.jsonl");
        fs::write(&p, "{\"input\":\"x\",\"vector\":[0.5,0.25]}\n\n").unwrap();
        let e = ScriptedEmbedder::load("file", &p).unwrap();
        assert_eq!(e.embed_one(EmbedInput::Text("x".into())).unwrap(), vec![0.5, 0.25]);
    }

    #[test]
    fn http_embedder_reports_transport_failure() {
        let e = HttpEmbedder::new("h", "http://127.0.0.1:9/embed", None, Duration::from_millis(200));
        assert!(matches!(
            e.embed(&[EmbedInput::Text("x".into())]),
            Err(EmbedError::Transport(_))
        ));
    }
}
