//! Hard-negative mining with a positive-relative ceiling: keep candidates
//! scoring below `margin * cos(query, positive)` and take the top k.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{MiningMetadata, Negative};
use crate::embed::{embed_all, EmbedError, Embedder, DEFAULT_BATCH};
use crate::hash::seed_from;
use crate::retrieval::{ExactIndex, RetrievalError};
use crate::Embedding;

pub const DEFAULT_K_NEGATIVES: usize = 15;
pub const DEFAULT_MARGIN: f64 = 0.95;
pub const DEFAULT_CANDIDATE_POOL: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillRule {
    Error,
    /// Top up from below-ceiling documents outside the candidate pool,
    /// drawn uniformly with a seeded RNG.
    RandomBelowCeiling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub k_negatives: usize,
    pub margin: f64,
    pub candidate_pool: usize,
    pub fill_rule: FillRule,
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            k_negatives: DEFAULT_K_NEGATIVES,
            margin: DEFAULT_MARGIN,
            candidate_pool: DEFAULT_CANDIDATE_POOL,
            fill_rule: FillRule::RandomBelowCeiling,
            seed: 0,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), MiningError> {
        if self.k_negatives == 0 {
            return Err(MiningError::Config("k_negatives must be at least 1".into()));
        }
        if !(self.margin > 0.0 && self.margin <= 1.0) {
            return Err(MiningError::Config("margin must be in (0, 1]".into()));
        }
        if self.candidate_pool == 0 {
            return Err(MiningError::Config("candidate_pool must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MiningError {
    #[error("insufficient negative pool: need {needed}, {available} eligible")]
    InsufficientPool { needed: usize, available: usize },
    #[error("invalid mining config: {0}")]
    Config(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// Candidate documents with their embeddings, built once and shared
/// read-only between workers.
pub struct NegativePool {
    docs: Vec<Negative>,
    index: ExactIndex<f64>,
}

impl NegativePool {
    /// Embed `docs` (duplicate ids keep the first copy).
    pub fn build<E: Embedder + ?Sized>(docs: Vec<Negative>, embedder: &E) -> Result<Self, MiningError> {
        let mut seen = HashSet::new();
        let docs: Vec<Negative> = docs.into_iter().filter(|d| seen.insert(d.id.clone())).collect();
        let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
        let vectors = embed_all(embedder, &texts, DEFAULT_BATCH)?;
        Self::from_parts(docs, vectors)
    }

    pub fn from_parts(docs: Vec<Negative>, vectors: Vec<Embedding>) -> Result<Self, MiningError> {
        let index = ExactIndex::build(docs.iter().map(|d| d.id.clone()).zip(vectors).collect())?;
        Ok(Self { docs, index })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Negative] {
        &self.docs
    }

    pub fn index(&self) -> &ExactIndex<f64> {
        &self.index
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MiningRequest<'a> {
    pub query: &'a str,
    pub positive: &'a str,
    pub positive_id: &'a str,
    /// Further ids never to return, such as the source document.
    pub exclude_ids: &'a [&'a str],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedNegatives {
    pub negatives: Vec<Negative>,
    /// Cosine to the query, aligned with `negatives`.
    pub scores: Vec<f64>,
    pub metadata: MiningMetadata,
}

pub fn mine_hard_negatives<E: Embedder + ?Sized>(
    request: &MiningRequest<'_>,
    pool: &NegativePool,
    embedder: &E,
    cfg: &MiningConfig,
) -> Result<MinedNegatives, MiningError> {
    cfg.validate()?;
    let k = cfg.k_negatives;
    let excluded = |i: usize| {
        let d = &pool.docs[i];
        d.id == request.positive_id
            || request.exclude_ids.contains(&d.id.as_str())
            || d.text.trim() == request.positive.trim()
            || d.text.trim() == request.query.trim()
    };
    let available = (0..pool.len()).filter(|&i| !excluded(i)).count();
    if available < k {
        return Err(MiningError::InsufficientPool {
            needed: k,
            available,
        });
    }

    let vecs = embedder.embed(&[request.query, request.positive])?;
    let [q, p] = <[Embedding; 2]>::try_from(vecs).map_err(|v| {
        MiningError::Embed(EmbedError::Count {
            expected: 2,
            got: v.len(),
        })
    })?;
    let positive_score = q
        .cosine(&p)
        .map_err(|e| MiningError::Retrieval(RetrievalError::Query(e)))?;
    let ceiling = cfg.margin * positive_score;

    let candidates = pool
        .index
        .rank_filtered(&q, cfg.candidate_pool, |i| !excluded(i))?;
    let mut chosen: Vec<(usize, f64)> = candidates
        .iter()
        .copied()
        .filter(|&(_, s)| s < ceiling)
        .take(k)
        .collect();

    let mut filled = 0;
    if chosen.len() < k {
        match cfg.fill_rule {
            FillRule::Error => {
                return Err(MiningError::InsufficientPool {
                    needed: k,
                    available: chosen.len(),
                })
            }
            FillRule::RandomBelowCeiling => {
                let in_pool: HashSet<usize> = candidates.iter().map(|&(i, _)| i).collect();
                let scores = pool.index.scores(&q)?;
                let mut extra: Vec<usize> = (0..pool.len())
                    .filter(|&i| !excluded(i) && !in_pool.contains(&i) && scores[i] < ceiling)
                    .collect();
                extra.sort_by(|&a, &b| pool.docs[a].id.cmp(&pool.docs[b].id));
                let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[
                    &cfg.seed.to_string(),
                    request.query,
                    request.positive,
                ]));
                extra.shuffle(&mut rng);
                let need = k - chosen.len();
                if extra.len() < need {
                    return Err(MiningError::InsufficientPool {
                        needed: k,
                        available: chosen.len() + extra.len(),
                    });
                }
                filled = need;
                chosen.extend(extra.into_iter().take(need).map(|i| (i, scores[i])));
            }
        }
    }

    Ok(MinedNegatives {
        negatives: chosen.iter().map(|&(i, _)| pool.docs[i].clone()).collect(),
        scores: chosen.iter().map(|&(_, s)| s).collect(),
        metadata: MiningMetadata {
            k_negatives: k,
            margin: cfg.margin,
            candidate_pool: cfg.candidate_pool,
            positive_score,
            ceiling,
            fill_rule: cfg.fill_rule,
            filled,
        },
    })
}
