//! Exact cosine-similarity retrieval over embedded evidence.
//!
//! The only search algorithm is a brute-force linear scan. Vectors are
//! stored in any [`Scalar`] type and persisted as `f32`; dot products are
//! accumulated in `f64`.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EvidenceItem, EvidencePayload, KnowledgeSource, Modality};
use crate::embedder::{EmbedError, EmbedInput, Embedder};
use crate::jsonl;
use crate::scalar::{dot, Scalar};

/// Format identifier written in every index header.
pub const INDEX_FORMAT: &str = "factcheck-vector-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector contains a non-finite entry")]
    NonFinite,
    #[error("vector must have at least one dimension")]
    EmptyVector,
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("duplicate id {0} in index")]
    DuplicateId(String),
    #[error("item {item_id} has modality {got:?}, index holds {expected:?}")]
    WrongModality {
        item_id: String,
        expected: Modality,
        got: Modality,
    },
    #[error("embedding backend failed on {item_id}: {source}")]
    BackendError {
        item_id: String,
        #[source]
        source: EmbedError,
    },
    #[error("dimension drift at {item_id}: expected {expected}, got {got}")]
    DimensionDrift {
        item_id: String,
        expected: usize,
        got: usize,
    },
    #[error("index i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed index file {path} line {line}: {reason}")]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

pub type Result<T, E = IndexError> = std::result::Result<T, E>;

/// A finite, non-empty vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(IndexError::EmptyVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }

    /// Multiply every entry by `factor`.
    pub fn scaled(&self, factor: T) -> Result<Self> {
        Self::new(self.values.iter().map(|&v| v * factor).collect())
    }

    /// Convert from `f32` storage.
    pub fn from_storage(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| T::from_storage(v)).collect())
    }
}

/// `dot(a, b) / (|a| |b|)`, accumulated in `f64` and clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(IndexError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(IndexError::ZeroVector);
    }
    Ok((dot(a.values(), b.values()) / (na * nb)).clamp(-1.0, 1.0) + 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub evidence_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone)]
struct Entry<T> {
    id: String,
    vector: EmbeddingVector<T>,
    norm: f64,
}

/// An immutable set of `(evidence_id, vector)` pairs of one modality.
#[derive(Debug, Clone)]
pub struct VectorIndex<T> {
    modality: Modality,
    embedder_tag: String,
    dim: usize,
    entries: Vec<Entry<T>>,
}

impl<T: Scalar> VectorIndex<T> {
    /// Assemble an index, validating id uniqueness, dimension and direction.
    pub fn from_entries(
        modality: Modality,
        embedder_tag: impl Into<String>,
        entries: Vec<(String, EmbeddingVector<T>)>,
    ) -> Result<Self> {
        let dim = entries.first().map(|(_, v)| v.dim()).ok_or(IndexError::EmptyIndex)?;
        let mut seen = HashSet::with_capacity(entries.len());
        let mut out = Vec::with_capacity(entries.len());
        for (id, vector) in entries {
            if vector.dim() != dim {
                return Err(IndexError::DimensionMismatch {
                    expected: dim,
                    got: vector.dim(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(IndexError::DuplicateId(id));
            }
            let norm = vector.norm();
            if norm == 0.0 {
                return Err(IndexError::ZeroVector);
            }
            out.push(Entry { id, vector, norm });
        }
        Ok(Self {
            modality,
            embedder_tag: embedder_tag.into(),
            dim,
            entries: out,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn embedder_tag(&self) -> &str {
        &self.embedder_tag
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector<T>> {
        self.entries.iter().find(|e| e.id == id).map(|e| &e.vector)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector<T>)> {
        self.entries.iter().map(|e| (e.id.as_str(), &e.vector))
    }

    /// Same ids with every vector multiplied by `factor(position)`.
    pub fn map_vectors(&self, mut f: impl FnMut(usize, &EmbeddingVector<T>) -> Result<EmbeddingVector<T>>) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| Ok((e.id.clone(), f(i, &e.vector)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_entries(self.modality, self.embedder_tag.clone(), entries)
    }

    /// Persist as JSON lines: one header object then one `{id, vector}` per entry.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = IndexHeader {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            dim: self.dim,
            modality: self.modality.as_str().into(),
            embedder_tag: self.embedder_tag.clone(),
            count: self.entries.len(),
        };
        let mut buf = serde_json::to_vec(&header).expect("header serializes");
        buf.push(b'\n');
        for e in &self.entries {
            let rec = IndexRecord {
                id: e.id.clone(),
                vector: e.vector.values().iter().map(|v| v.to_storage()).collect(),
            };
            serde_json::to_writer(&mut buf, &rec).expect("record serializes");
            buf.push(b'\n');
        }
        jsonl::write_atomic(path, &buf).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let fmt_err = |line: usize, reason: String| IndexError::Format {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| fmt_err(1, "missing header".into()))?;
        let header: IndexHeader =
            serde_json::from_str(head).map_err(|e| fmt_err(1, e.to_string()))?;
        if header.format != INDEX_FORMAT || header.version != INDEX_VERSION {
            return Err(fmt_err(
                1,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        let modality: Modality = header.modality.parse().map_err(|e| fmt_err(1, e))?;
        let mut entries = Vec::with_capacity(header.count);
        for (i, line) in lines {
            let rec: IndexRecord =
                serde_json::from_str(line).map_err(|e| fmt_err(i + 1, e.to_string()))?;
            if rec.vector.len() != header.dim {
                return Err(fmt_err(
                    i + 1,
                    format!("vector has {} dims, header says {}", rec.vector.len(), header.dim),
                ));
            }
            entries.push((rec.id, EmbeddingVector::from_storage(&rec.vector)?));
        }
        if entries.len() != header.count {
            return Err(fmt_err(
                1,
                format!("header count {} but {} records", header.count, entries.len()),
            ));
        }
        Self::from_entries(modality, header.embedder_tag, entries)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    version: u32,
    dim: usize,
    modality: String,
    embedder_tag: String,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    id: String,
    vector: Vec<f32>,
}

fn rank_order(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// The `k` entries most similar to `query`, best first; ties by ascending id.
pub fn top_k<T: Scalar>(
    query: &EmbeddingVector<T>,
    index: &VectorIndex<T>,
    k: usize,
) -> Result<Vec<RetrievalHit>> {
    if k == 0 {
        return Err(IndexError::ZeroK);
    }
    if index.is_empty() {
        return Err(IndexError::EmptyIndex);
    }
    if query.dim() != index.dim() {
        return Err(IndexError::DimensionMismatch {
            expected: index.dim(),
            got: query.dim(),
        });
    }
    let qn = query.norm();
    if qn == 0.0 {
        return Err(IndexError::ZeroVector);
    }
    let mut scored: Vec<(f64, &str)> = index
        .entries
        .iter()
        .map(|e| {
            let s = dot(query.values(), e.vector.values()) / (qn * e.norm);
            // `+ 0.0` folds -0.0 into 0.0 so signed zeros tie on id
            (s.clamp(-1.0, 1.0) + 0.0, e.id.as_str())
        })
        .collect();
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (score, id))| RetrievalHit {
            evidence_id: id.to_string(),
            score,
            rank: i + 1,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterDecision {
    Keep,
    Drop,
}

/// Keep the image iff its similarity to the claim is at least `tau`.
pub fn threshold_filter<T: Scalar>(
    claim_vec: &EmbeddingVector<T>,
    image_vec: &EmbeddingVector<T>,
    tau: f64,
) -> Result<FilterDecision> {
    let s = cosine_similarity(claim_vec, image_vec)?;
    Ok(if s >= tau {
        FilterDecision::Keep
    } else {
        FilterDecision::Drop
    })
}

/// Items per embedding request.
pub const EMBED_BATCH: usize = 32;

/// The embedding input for one knowledge-source item.
pub fn embed_input(item: &EvidenceItem, knowledge: &KnowledgeSource) -> EmbedInput {
    match &item.payload {
        EvidencePayload::Text(s) => EmbedInput::Text(s.clone()),
        EvidencePayload::Image(rel) => EmbedInput::Image(knowledge.resolve(rel)),
    }
}

/// Embed every item (all of one modality) and assemble an index.
///
/// Fails as a whole on the first backend error or dimension change.
pub fn build_index<'a, T: Scalar>(
    items: impl IntoIterator<Item = &'a EvidenceItem>,
    knowledge: &KnowledgeSource,
    embedder: &dyn Embedder,
) -> Result<VectorIndex<T>> {
    let items: Vec<&EvidenceItem> = items.into_iter().collect();
    let modality = items.first().ok_or(IndexError::EmptyIndex)?.modality();
    let mut entries = Vec::with_capacity(items.len());
    let mut dim: Option<usize> = None;
    for chunk in items.chunks(EMBED_BATCH) {
        for item in chunk {
            if item.modality() != modality {
                return Err(IndexError::WrongModality {
                    item_id: item.evidence_id.clone(),
                    expected: modality,
                    got: item.modality(),
                });
            }
        }
        let inputs: Vec<EmbedInput> = chunk.iter().map(|i| embed_input(i, knowledge)).collect();
        let vectors = embedder.embed(&inputs).map_err(|source| {
            let at = source.input_index().unwrap_or(0).min(chunk.len() - 1);
            IndexError::BackendError {
                item_id: chunk[at].evidence_id.clone(),
                source,
            }
        })?;
        if vectors.len() != chunk.len() {
            return Err(IndexError::BackendError {
                item_id: chunk[vectors.len().min(chunk.len() - 1)].evidence_id.clone(),
                source: EmbedError::Protocol(format!(
                    "expected {} vectors, got {}",
                    chunk.len(),
                    vectors.len()
                )),
            });
        }
        for (item, v) in chunk.iter().zip(vectors) {
            let expected = *dim.get_or_insert(v.len());
            if v.len() != expected {
                return Err(IndexError::DimensionDrift {
                    item_id: item.evidence_id.clone(),
                    expected,
                    got: v.len(),
                });
            }
            entries.push((item.evidence_id.clone(), EmbeddingVector::from_storage(&v)?));
        }
    }
    VectorIndex::from_entries(modality, embedder.tag(), entries)
}
