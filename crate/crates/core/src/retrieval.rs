//! Exact cosine top-k search.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::vector::{dot, EmbeddingVector, VectorError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("duplicate document id {0}")]
    DuplicateId(String),
    #[error("document {id}: {source}")]
    Document { id: String, source: VectorError },
    #[error("query: {0}")]
    Query(VectorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit<T> {
    pub id: String,
    pub score: T,
}

/// Descending score, then ascending id.
fn rank_order<T: Scalar>(a: &(usize, T), b: &(usize, T), ids: &[String]) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| ids[a.0].cmp(&ids[b.0]))
}

fn select_top_indices<T: Scalar>(
    mut scored: Vec<(usize, T)>,
    k: usize,
    ids: &[String],
) -> Vec<(usize, T)> {
    if k < scored.len() {
        scored.select_nth_unstable_by(k, |a, b| rank_order(a, b, ids));
        scored.truncate(k);
    }
    scored.sort_by(|a, b| rank_order(a, b, ids));
    scored
}

fn select_top<T: Scalar>(scored: Vec<(usize, T)>, k: usize, ids: &[String]) -> Vec<Hit<T>> {
    select_top_indices(scored, k, ids)
        .into_iter()
        .map(|(i, score)| Hit {
            id: ids[i].clone(),
            score,
        })
        .collect()
}

/// Cosine top-k over an unindexed corpus.
pub fn top_k<T: Scalar>(
    query: &EmbeddingVector<T>,
    corpus: &[(String, EmbeddingVector<T>)],
    k: usize,
) -> Result<Vec<Hit<T>>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if corpus.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let ids: Vec<String> = corpus.iter().map(|(id, _)| id.clone()).collect();
    let scored = corpus
        .iter()
        .enumerate()
        .map(|(i, (id, v))| {
            query
                .cosine(v)
                .map(|s| (i, s))
                .map_err(|source| match source {
                    VectorError::ZeroNorm if query.norm() == T::zero() => {
                        RetrievalError::Query(VectorError::ZeroNorm)
                    }
                    source => RetrievalError::Document {
                        id: id.clone(),
                        source,
                    },
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(select_top(scored, k, &ids))
}

/// Pluggable search boundary so an approximate index can replace the exact one.
pub trait RetrievalIndex<T: Scalar>: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dim(&self) -> usize;

    fn search(&self, query: &EmbeddingVector<T>, k: usize) -> Result<Vec<Hit<T>>, RetrievalError>;
}

/// Brute-force index over L2-normalized vectors.
#[derive(Debug, Clone)]
pub struct ExactIndex<T: Scalar> {
    ids: Vec<String>,
    vectors: Vec<Vec<T>>,
    dim: usize,
}

impl<T: Scalar> ExactIndex<T> {
    pub fn build(items: Vec<(String, EmbeddingVector<T>)>) -> Result<Self, RetrievalError> {
        let mut seen = HashSet::new();
        let mut ids = Vec::with_capacity(items.len());
        let mut vectors = Vec::with_capacity(items.len());
        let mut dim = None;
        for (id, v) in items {
            if !seen.insert(id.clone()) {
                return Err(RetrievalError::DuplicateId(id));
            }
            let d = *dim.get_or_insert(v.dim());
            if v.dim() != d {
                return Err(RetrievalError::Document {
                    id,
                    source: VectorError::DimMismatch {
                        expected: d,
                        got: v.dim(),
                    },
                });
            }
            let n = v.normalized().map_err(|source| RetrievalError::Document {
                id: id.clone(),
                source,
            })?;
            ids.push(id);
            vectors.push(n.into_inner());
        }
        Ok(Self {
            ids,
            vectors,
            dim: dim.ok_or(RetrievalError::EmptyCorpus)?,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Cosine score of every indexed document, in insertion order.
    pub fn scores(&self, query: &EmbeddingVector<T>) -> Result<Vec<T>, RetrievalError> {
        if query.dim() != self.dim {
            return Err(RetrievalError::Query(VectorError::DimMismatch {
                expected: self.dim,
                got: query.dim(),
            }));
        }
        let q = query.normalized().map_err(RetrievalError::Query)?;
        Ok(self
            .vectors
            .iter()
            .map(|v| dot(q.as_slice(), v))
            .collect())
    }

    /// Top-k `(position, score)` restricted to documents accepted by `keep`.
    pub fn rank_filtered(
        &self,
        query: &EmbeddingVector<T>,
        k: usize,
        keep: impl Fn(usize) -> bool,
    ) -> Result<Vec<(usize, T)>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let scored: Vec<(usize, T)> = self
            .scores(query)?
            .into_iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .collect();
        Ok(select_top_indices(scored, k, &self.ids))
    }
}

impl<T: Scalar> RetrievalIndex<T> for ExactIndex<T> {
    fn len(&self) -> usize {
        self.ids.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn search(&self, query: &EmbeddingVector<T>, k: usize) -> Result<Vec<Hit<T>>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let scored = self.scores(query)?.into_iter().enumerate().collect();
        Ok(select_top(scored, k, &self.ids))
    }
}
