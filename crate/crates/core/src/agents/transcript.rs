//! Request/response log of a run.
//!
//! Appends are serialized behind a mutex. The saved file holds one entry
//! per distinct digest, sorted by digest, so it does not depend on how
//! concurrent requests were scheduled.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

use super::backend::AgentRole;
use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub digest: String,
    pub response: String,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<AgentRole>,
    /// Canonical request, kept for inspection; replay only needs the digest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<Value>,
}

impl TranscriptEntry {
    /// True if the canonical request carries an image part.
    pub fn has_image(&self) -> bool {
        self.request_parts().any(|p| p.get("image_sha256").is_some())
    }

    /// Concatenated text parts of the canonical request.
    pub fn request_text(&self) -> String {
        self.request_parts()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect()
    }

    fn request_parts(&self) -> impl Iterator<Item = &Value> {
        self.request
            .iter()
            .flat_map(|r| r["messages"].as_array().into_iter().flatten())
            .flat_map(|m| m["parts"].as_array().into_iter().flatten())
    }
}

#[derive(Default)]
struct Inner {
    entries: Vec<TranscriptEntry>,
    first_response: HashMap<String, String>,
    nondeterministic: usize,
}

#[derive(Default)]
pub struct Transcript {
    inner: Mutex<Inner>,
}

impl Transcript {
    pub fn append(&self, entry: TranscriptEntry) {
        let mut inner = self.inner.lock().expect("transcript lock poisoned");
        match inner.first_response.get(&entry.digest) {
            Some(prev) if *prev != entry.response => {
                warn!(digest = %entry.digest, "identical request produced a different response");
                inner.nondeterministic += 1;
            }
            Some(_) => {}
            None => {
                inner
                    .first_response
                    .insert(entry.digest.clone(), entry.response.clone());
            }
        }
        inner.entries.push(entry);
    }

    /// All entries in append order.
    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.inner.lock().expect("transcript lock poisoned").entries.clone()
    }

    pub fn by_role(&self, role: AgentRole) -> Vec<TranscriptEntry> {
        self.entries()
            .into_iter()
            .filter(|e| e.role == Some(role))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("transcript lock poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Repeated requests whose responses differed from the first one seen.
    pub fn nondeterministic_count(&self) -> usize {
        self.inner.lock().expect("transcript lock poisoned").nondeterministic
    }

    /// One entry per digest (the first appended), sorted by digest.
    pub fn deduplicated(&self) -> Vec<TranscriptEntry> {
        let mut by_digest = BTreeMap::new();
        for e in self.entries() {
            by_digest.entry(e.digest.clone()).or_insert(e);
        }
        by_digest.into_values().collect()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        jsonl::write_records(path, &self.deduplicated())
    }

    pub fn load_entries(path: &Path) -> std::io::Result<Vec<TranscriptEntry>> {
        let text = fs::read_to_string(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l)
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(d: &str, r: &str) -> TranscriptEntry {
        TranscriptEntry {
            digest: d.into(),
            response: r.into(),
            latency_ms: 1.0,
            role: Some(AgentRole::Verifier),
            request: None,
        }
    }

    #[test]
    fn flags_nondeterminism_without_failing() {
        let t = Transcript::default();
        t.append(e("a", "Supported"));
        t.append(e("a", "Supported"));
        t.append(e("a", "Refuted"));
        assert_eq!(t.len(), 3);
        assert_eq!(t.nondeterministic_count(), 1);
        assert_eq!(t.deduplicated(), vec![e("a", "Supported")]);
    }

    #[test]
    fn save_is_sorted_and_reloadable() {
        let dir = tempfile::tempdir().unwrap();
        let t = Transcript::default();
        t.append(e("b", "2"));
        t.append(e("a", "1"));
        let p = dir.path().join("t.jsonl");
        t.save(&p).unwrap();
        let back = Transcript::load_entries(&p).unwrap();
        assert_eq!(back, vec![e("a", "1"), e("b", "2")]);
    }
}
