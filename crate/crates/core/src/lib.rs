//! Adaptive multimodal fact verification.
//!
//! Evidence is retrieved from a knowledge source by exact cosine search,
//! an Analyzer agent judges whether the image evidence is needed, and a
//! Verifier agent predicts the verdict with that judgment in its prompt.
//! The crate also covers the ablation strategies, construction of
//! temporally filtered web-evidence datasets, and evaluation statistics.
//!
//! Retrieval math and statistics are generic over [`Scalar`]; the aliases
//! below fix the storage type used by the pipeline.

pub mod agents;
pub mod corpus;
pub mod embed_index;
pub mod embedder;
pub mod evalkit;
pub mod pipeline;
mod jsonl;
pub mod scalar;
pub mod webfc;

pub use scalar::Scalar;

/// Embedding vector in the on-disk precision.
pub type Embedding = embed_index::EmbeddingVector<f32>;
/// Vector index in the on-disk precision.
pub type Index = embed_index::VectorIndex<f32>;
/// Double-precision vector, for analysis code that wants it.
pub type Embedding64 = embed_index::EmbeddingVector<f64>;
pub type Index64 = embed_index::VectorIndex<f64>;
