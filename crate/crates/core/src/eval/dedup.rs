use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{EvalBenchmark, Qrels};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupDelta {
    pub queries_removed: usize,
    pub docs_removed: usize,
    /// Judgments rewritten to point at a canonical document.
    pub qrels_remapped: usize,
}

/// Remove exact duplicates (compared after trimming surrounding whitespace).
/// The first document with a given text is canonical and judgments on later
/// copies move to it, keeping the higher relevance. Later duplicate queries
/// are dropped together with their judgments.
pub fn dedup_benchmark(b: &EvalBenchmark) -> (EvalBenchmark, DedupDelta) {
    let mut delta = DedupDelta::default();

    let mut canonical_by_text: HashMap<&str, &str> = HashMap::new();
    let mut doc_map: HashMap<&str, &str> = HashMap::new();
    let mut corpus = Vec::with_capacity(b.corpus.len());
    for d in &b.corpus {
        let canonical = *canonical_by_text.entry(d.text.trim()).or_insert(d.id.as_str());
        doc_map.insert(d.id.as_str(), canonical);
        if canonical == d.id {
            corpus.push(d.clone());
        } else {
            delta.docs_removed += 1;
        }
    }

    let mut seen_queries: HashSet<&str> = HashSet::new();
    let mut kept_qids: HashSet<&str> = HashSet::new();
    let mut queries = Vec::with_capacity(b.queries.len());
    for q in &b.queries {
        if seen_queries.insert(q.text.trim()) {
            kept_qids.insert(q.id.as_str());
            queries.push(q.clone());
        } else {
            delta.queries_removed += 1;
        }
    }

    let mut qrels = Qrels::new();
    for (qid, judgments) in &b.qrels {
        if !kept_qids.contains(qid.as_str()) {
            continue;
        }
        let mut merged: BTreeMap<String, u32> = BTreeMap::new();
        for (docid, &rel) in judgments {
            let target = doc_map.get(docid.as_str()).copied().unwrap_or(docid.as_str());
            if target != docid {
                delta.qrels_remapped += 1;
            }
            let slot = merged.entry(target.to_string()).or_insert(0);
            *slot = (*slot).max(rel);
        }
        qrels.insert(qid.clone(), merged);
    }

    (
        EvalBenchmark {
            name: b.name.clone(),
            queries,
            corpus,
            qrels,
            task_instruction: b.task_instruction.clone(),
        },
        delta,
    )
}
