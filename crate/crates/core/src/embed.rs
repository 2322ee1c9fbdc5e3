//! Text embedders: seeded hash vectors for tests and desk runs, fixture
//! lookups for externally computed vectors, and an HTTP client for
//! OpenAI-compatible `/embeddings` endpoints.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::gateway::{RetryPolicy, Transport, TransportError, UreqTransport};
use crate::hash::{seed_from, stable_hash};
use crate::vector::{EmbeddingVector, VectorError};
use crate::Embedding;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("no fixture vector for text {text_hash}")]
    Missing { text_hash: String },
    #[error("embedder returned {got} vectors for {expected} texts")]
    Count { expected: usize, got: usize },
    #[error("embedding: {0}")]
    Vector(#[from] VectorError),
    #[error("embedding endpoint: {0}")]
    Remote(String),
    #[error("embedder config: {0}")]
    Config(String),
}

/// Batch of texts in, equal-dimension vectors out. Implementations must
/// tolerate concurrent calls.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError>;
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        (**self).embed(texts)
    }
}

impl<E: Embedder + ?Sized> Embedder for Box<E> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        (**self).embed(texts)
    }
}

impl<E: Embedder + ?Sized> Embedder for std::sync::Arc<E> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        (**self).embed(texts)
    }
}

pub const DEFAULT_BATCH: usize = 64;

/// Embed `texts` in batches of `batch_size`, checking the returned count.
pub fn embed_all<E: Embedder + ?Sized>(
    embedder: &E,
    texts: &[&str],
    batch_size: usize,
) -> Result<Vec<Embedding>, EmbedError> {
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(batch_size.max(1)) {
        let got = embedder.embed(chunk)?;
        if got.len() != chunk.len() {
            return Err(EmbedError::Count {
                expected: chunk.len(),
                got: got.len(),
            });
        }
        out.extend(got);
    }
    if let Some(first) = out.first() {
        for v in &out {
            first.check_dim(v)?;
        }
    }
    Ok(out)
}

/// Deterministic bag-of-tokens embedder. Each lowercase alphanumeric token
/// maps to a seeded random direction; the text itself adds a small unique
/// component so distinct texts never collide exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashEmbedder {
    seed: u64,
    dim: usize,
}

const WHOLE_TEXT_WEIGHT: f64 = 0.25;
pub const DEFAULT_HASH_DIM: usize = 64;

impl HashEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self {
            seed,
            dim: dim.max(1),
        }
    }

    /// Parse `seed:N[,dim:D]`.
    pub fn from_spec(spec: &str) -> Result<Self, EmbedError> {
        let mut seed = None;
        let mut dim = DEFAULT_HASH_DIM;
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once(':')
                .ok_or_else(|| EmbedError::Config(format!("expected key:value, got {part:?}")))?;
            let n: u64 = value
                .trim()
                .parse()
                .map_err(|_| EmbedError::Config(format!("{key}: not an integer: {value:?}")))?;
            match key.trim() {
                "seed" => seed = Some(n),
                "dim" if n > 0 => dim = n as usize,
                "dim" => return Err(EmbedError::Config("dim must be positive".into())),
                other => return Err(EmbedError::Config(format!("unknown key {other:?}"))),
            }
        }
        let seed = seed.ok_or_else(|| EmbedError::Config("missing seed:N".into()))?;
        Ok(Self::new(seed, dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn direction(&self, kind: &str, key: &str, weight: f64, acc: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[&self.seed.to_string(), kind, key]));
        for a in acc.iter_mut() {
            *a += weight * rng.random_range(-1.0..1.0);
        }
    }

    fn embed_one(&self, text: &str) -> Result<Embedding, EmbedError> {
        let mut acc = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            self.direction("token", token, 1.0, &mut acc);
        }
        self.direction("text", text, WHOLE_TEXT_WEIGHT, &mut acc);
        Ok(EmbeddingVector::new(acc)?.normalized()?)
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_hash: Option<String>,
    pub vector: Vec<f64>,
}

/// Looks vectors up by text hash. Fixture lines carry either the text or its
/// [`text_hash`].
#[derive(Debug, Clone, Default)]
pub struct FixtureEmbedder {
    vectors: HashMap<String, Embedding>,
}

pub fn text_hash(text: &str) -> String {
    stable_hash(&[text])
}

impl FixtureEmbedder {
    pub fn from_pairs<S: AsRef<str>>(pairs: impl IntoIterator<Item = (S, Embedding)>) -> Self {
        Self {
            vectors: pairs
                .into_iter()
                .map(|(t, v)| (text_hash(t.as_ref()), v))
                .collect(),
        }
    }

    pub fn insert(&mut self, text: &str, vector: Embedding) {
        self.vectors.insert(text_hash(text), vector);
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| EmbedError::Config(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text).map_err(|e| EmbedError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut out = Self::default();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord =
                serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            let key = match (rec.text_hash, rec.text) {
                (Some(h), _) => h,
                (None, Some(t)) => text_hash(&t),
                (None, None) => return Err(format!("line {}: needs \"text\" or \"text_hash\"", i + 1)),
            };
            let v = EmbeddingVector::new(rec.vector).map_err(|e| format!("line {}: {e}", i + 1))?;
            if *dim.get_or_insert(v.dim()) != v.dim() {
                return Err(format!("line {}: dimension {} differs from {}", i + 1, v.dim(), dim.unwrap_or(0)));
            }
            out.vectors.insert(key, v);
        }
        Ok(out)
    }
}

impl Embedder for FixtureEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        texts
            .iter()
            .map(|t| {
                let h = text_hash(t);
                self.vectors
                    .get(&h)
                    .cloned()
                    .ok_or(EmbedError::Missing { text_hash: h })
            })
            .collect()
    }
}

/// Client for OpenAI-compatible `/embeddings` endpoints.
pub struct HttpEmbedder<T: Transport = UreqTransport> {
    url: String,
    api_key: Option<String>,
    model: String,
    retry: RetryPolicy,
    transport: T,
}

impl HttpEmbedder<UreqTransport> {
    pub fn new(api_base: &str, api_key: Option<String>, model: &str) -> Self {
        Self::with_transport(api_base, api_key, model, UreqTransport::default())
    }
}

impl<T: Transport> HttpEmbedder<T> {
    pub fn with_transport(api_base: &str, api_key: Option<String>, model: &str, transport: T) -> Self {
        Self {
            url: format!("{}/embeddings", api_base.trim_end_matches('/')),
            api_key,
            model: model.to_string(),
            retry: RetryPolicy::default(),
            transport,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn post(&self, body: &Value) -> Result<String, EmbedError> {
        let mut last = String::new();
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                let backoff = self
                    .retry
                    .base_delay
                    .saturating_mul(1u32.checked_shl(attempt - 1).unwrap_or(u32::MAX))
                    .min(self.retry.max_delay);
                std::thread::sleep(backoff);
            }
            match self.transport.post_json(&self.url, self.api_key.as_deref(), body) {
                Ok(r) if (200..300).contains(&r.status) => return Ok(r.body),
                Ok(r) if r.status == 429 || r.status >= 500 => last = format!("HTTP {}", r.status),
                Ok(r) => return Err(EmbedError::Remote(format!("HTTP {}: {}", r.status, r.body))),
                Err(TransportError(e)) => last = e,
            }
        }
        Err(EmbedError::Remote(format!("retries exhausted: {last}")))
    }
}

impl<T: Transport> Embedder for HttpEmbedder<T> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = self.post(&json!({"model": self.model, "input": texts}))?;
        let value: Value =
            serde_json::from_str(&body).map_err(|e| EmbedError::Remote(format!("bad JSON: {e}")))?;
        let data = value
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Remote("missing data array".into()))?;
        let mut out: Vec<Option<Embedding>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .map_or(pos, |i| i as usize);
            let values: Vec<f64> = item
                .get("embedding")
                .and_then(|e| serde_json::from_value(e.clone()).ok())
                .ok_or_else(|| EmbedError::Remote(format!("item {pos}: missing embedding")))?;
            let slot = out
                .get_mut(index)
                .ok_or_else(|| EmbedError::Remote(format!("index {index} out of range")))?;
            *slot = Some(EmbeddingVector::new(values)?);
        }
        let got = out.iter().filter(|v| v.is_some()).count();
        out.into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or(EmbedError::Count {
                expected: texts.len(),
                got,
            })
    }
}
