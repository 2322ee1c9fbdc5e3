use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, Qrels, RetrievalRun};
use crate::scalar::Scalar;

pub const DEFAULT_NDCG_K: usize = 10;

/// NDCG@k with linear gain `rel / log2(rank + 1)`. Unjudged documents have
/// relevance 0; a query without positive judgments scores 0.
pub fn ndcg_at_k<T: Scalar>(ranking: &[&str], judgments: &BTreeMap<String, u32>, k: usize) -> T {
    let discount = |rank: usize| T::one() / T::from_usize(rank + 1).unwrap_or_else(T::nan).log2();
    let gain = |rel: u32| T::from_u32(rel).unwrap_or_else(T::nan);

    let dcg: T = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(judgments.get(*d).copied().unwrap_or(0)) * discount(i + 1))
        .sum();

    let mut ideal: Vec<u32> = judgments.values().copied().filter(|&r| r > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: T = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| gain(r) * discount(i + 1))
        .sum();

    if idcg == T::zero() {
        T::zero()
    } else {
        dcg / idcg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NdcgScores {
    pub k: usize,
    /// Scores for queries with at least one positive judgment.
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
}

/// Score a run. The mean covers judged queries only; judged queries missing
/// from the run contribute 0.
pub fn score_run(run: &RetrievalRun, qrels: &Qrels, k: usize) -> Result<NdcgScores, EvalError> {
    if k == 0 {
        return Err(EvalError::Invalid("k must be at least 1".into()));
    }
    let mut per_query = BTreeMap::new();
    for (qid, judgments) in qrels {
        if !judgments.values().any(|&r| r > 0) {
            continue;
        }
        let ranking: Vec<&str> = run
            .get(qid)
            .map(|hits| hits.iter().map(|h| h.id.as_str()).collect())
            .unwrap_or_default();
        per_query.insert(qid.clone(), ndcg_at_k::<f64>(&ranking, judgments, k));
    }
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    Ok(NdcgScores { k, per_query, mean })
}
