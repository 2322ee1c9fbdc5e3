//! Toolkit for building code-retrieval training data: a task registry and
//! prompt renderer for LLM-driven pair synthesis, hard-negative mining,
//! curriculum manifests with their data filters, a reference contrastive
//! loss, and an NDCG@10 evaluation harness.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`, which the pipeline uses throughout.

pub mod contrastive;
pub mod corpus;
pub mod curriculum;
pub mod embed;
pub mod eval;
pub mod gateway;
pub mod hash;
pub mod jsonl;
pub mod mining;
mod par;
pub mod prompt;
pub mod registry;
pub mod retrieval;
pub mod scalar;
pub mod synth;
pub mod template;
pub mod vector;

pub use scalar::Scalar;
pub use vector::{EmbeddingVector, VectorError};

pub type Embedding = EmbeddingVector<f64>;
pub type Hit = retrieval::Hit<f64>;
pub type Index = retrieval::ExactIndex<f64>;
pub type LossConfig = contrastive::LossConfig<f64>;
pub type LossInstance = contrastive::LossInstance<f64>;
pub type Gradients = contrastive::Gradients<f64>;
