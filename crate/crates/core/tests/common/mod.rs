//! Fixtures and brute-force oracles shared by the integration tests. The
//! oracles are written from the definitions, without calling into the
//! library code they check.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use coder_forge::corpus::{CodeDocument, MiningMetadata, Negative, QueryPositivePair, TrainingSample};
use coder_forge::eval::{EvalBenchmark, Qrels, TextRecord};
use coder_forge::gateway::AnnotationLabel;
use coder_forge::mining::FillRule;
use coder_forge::registry::NaturalLanguage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    // Box-Muller; good enough for test geometry.
    (0..dim)
        .map(|_| {
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

// ---- mining ----

/// Every non-excluded document scoring strictly below `margin * cos(q, pos)`,
/// best first (ties by id), truncated to `k`.
pub fn oracle_mine(
    q: &[f64],
    pos: &[f64],
    docs: &[(String, Vec<f64>)],
    excluded: &[&str],
    margin: f64,
    k: usize,
) -> Vec<String> {
    let ceiling = margin * cos(q, pos);
    let mut eligible: Vec<(f64, &str)> = docs
        .iter()
        .filter(|(id, _)| !excluded.contains(&id.as_str()))
        .map(|(id, v)| (cos(q, v), id.as_str()))
        .filter(|(s, _)| *s < ceiling)
        .collect();
    eligible.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    eligible.into_iter().take(k).map(|(_, id)| id.to_string()).collect()
}

// ---- ndcg ----

pub fn oracle_ndcg(ranking: &[String], judgments: &BTreeMap<String, u32>, k: usize) -> f64 {
    let mut dcg = 0.0;
    for (pos, d) in ranking.iter().enumerate() {
        if pos >= k {
            break;
        }
        let rel = f64::from(*judgments.get(d).unwrap_or(&0));
        dcg += rel / ((pos + 2) as f64).log2();
    }
    let mut rels: Vec<u32> = judgments.values().copied().collect();
    rels.sort_by(|a, b| b.cmp(a));
    let mut idcg = 0.0;
    for (pos, r) in rels.iter().enumerate().take(k) {
        idcg += f64::from(*r) / ((pos + 2) as f64).log2();
    }
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

// ---- loss ----

/// Naive log-sum-exp form of the InfoNCE loss over raw (unnormalized) vectors.
pub fn oracle_loss(q: &[f64], pos: &[f64], negs: &[Vec<f64>], tau: f64) -> f64 {
    let logits: Vec<f64> = std::iter::once(pos)
        .chain(negs.iter().map(Vec::as_slice))
        .map(|d| cos(q, d) / tau)
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[0]
}

/// Central differences of `f` with respect to every coordinate of `x`.
pub fn central_diff(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), or the absolute error when both are tiny.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = dot(a, a).sqrt().max(dot(b, b).sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

// ---- dedup ----

fn rec(id: String, text: String) -> TextRecord {
    TextRecord { id, text }
}

/// A benchmark drawn from a small vocabulary so exact (post-trim) duplicate
/// texts are common, with random padding whitespace.
pub fn random_benchmark(rng: &mut ChaCha8Rng, name: &str) -> EvalBenchmark {
    const VOCAB: [&str; 6] = ["sort list", "open file", "parse json", "read csv", "join paths", "hash bytes"];
    let pad = |rng: &mut ChaCha8Rng, t: &str| {
        let pads = ["", " ", "\n", "\t ", "  "];
        format!("{}{}{}", pads[rng.random_range(0..pads.len())], t, pads[rng.random_range(0..pads.len())])
    };
    let n_docs = rng.random_range(1..30);
    let corpus: Vec<TextRecord> = (0..n_docs)
        .map(|i| {
            let t = VOCAB[rng.random_range(0..VOCAB.len())];
            let variant = rng.random_range(0..3);
            rec(format!("d{i}"), pad(rng, &format!("{t} v{variant}")))
        })
        .collect();
    let n_queries = rng.random_range(1..12);
    let queries: Vec<TextRecord> = (0..n_queries)
        .map(|i| {
            let t = VOCAB[rng.random_range(0..VOCAB.len())];
            rec(format!("q{i}"), pad(rng, &format!("how to {t}")))
        })
        .collect();
    let mut qrels = Qrels::new();
    for q in &queries {
        let mut j = BTreeMap::new();
        for _ in 0..rng.random_range(1..5) {
            let d = &corpus[rng.random_range(0..corpus.len())];
            j.insert(d.id.clone(), rng.random_range(0..3u32));
        }
        qrels.insert(q.id.clone(), j);
    }
    EvalBenchmark {
        name: name.to_string(),
        queries,
        corpus,
        qrels,
        task_instruction: "Given a question, retrieve code.".into(),
    }
}

/// Expected deduplicated benchmark computed straight from the rules: first
/// copy of each trimmed text survives; judgments follow their document to its
/// surviving copy, keeping the maximum; later duplicate queries disappear.
pub fn oracle_dedup(b: &EvalBenchmark) -> EvalBenchmark {
    let mut first_doc: HashMap<String, String> = HashMap::new();
    let mut corpus = Vec::new();
    for d in &b.corpus {
        let key = d.text.trim().to_string();
        if let std::collections::hash_map::Entry::Vacant(e) = first_doc.entry(key) {
            e.insert(d.id.clone());
            corpus.push(d.clone());
        }
    }
    let canonical = |id: &str| -> String {
        b.corpus
            .iter()
            .find(|d| d.id == id)
            .map(|d| first_doc[d.text.trim()].clone())
            .unwrap_or_else(|| id.to_string())
    };
    let mut seen = Vec::<String>::new();
    let mut queries = Vec::new();
    for q in &b.queries {
        let key = q.text.trim().to_string();
        if !seen.contains(&key) {
            seen.push(key);
            queries.push(q.clone());
        }
    }
    let mut qrels = Qrels::new();
    for q in &queries {
        if let Some(j) = b.qrels.get(&q.id) {
            let mut out: BTreeMap<String, u32> = BTreeMap::new();
            for (d, &r) in j {
                let c = canonical(d);
                let e = out.entry(c).or_insert(r);
                *e = (*e).max(r);
            }
            qrels.insert(q.id.clone(), out);
        }
    }
    EvalBenchmark {
        name: b.name.clone(),
        queries,
        corpus,
        qrels,
        task_instruction: b.task_instruction.clone(),
    }
}

// ---- synthesis fixtures ----

pub const WORDS: [&str; 12] = [
    "parse", "socket", "matrix", "user", "cache", "token", "image", "queue", "price", "graph", "date", "file",
];

/// Unique marker token carried by fixture document `i`.
pub fn marker(i: usize) -> String {
    format!("k{i:03}z")
}

pub fn doc_words(i: usize) -> (&'static str, &'static str, &'static str) {
    (WORDS[i % 12], WORDS[(i / 12 + 5) % 12], WORDS[(i * 7 + 3) % 12])
}

pub fn python_doc(i: usize) -> CodeDocument {
    let (a, b, c) = doc_words(i);
    let m = marker(i);
    CodeDocument::new(
        format!("def {a}_{b}_{m}({c}):\n    return {b}.{a}({c}, {i})"),
        "Python".into(),
        format!("repo/mod_{i}.py"),
    )
}

/// Index of the fixture document a text was derived from.
pub fn marker_of(text: &str) -> Option<usize> {
    text.as_bytes().windows(5).find_map(|w| {
        let digits = &w[1..4];
        (w[0] == b'k' && w[4] == b'z' && digits.iter().all(u8::is_ascii_digit))
            .then(|| std::str::from_utf8(digits).ok()?.parse().ok())
            .flatten()
    })
}

// ---- samples ----

pub fn make_sample(task: &str, pair_id: &str, query: &str, positive: (&str, &str), negatives: &[(String, String)]) -> TrainingSample {
    TrainingSample {
        pair: QueryPositivePair {
            pair_id: pair_id.into(),
            task_name: task.into(),
            natural_language: NaturalLanguage::English,
            programming_languages: vec!["Python".into()],
            task_instruction: "Given a web search query, retrieve relevant code that can help answer the query.".into(),
            query: query.into(),
            positive: positive.1.into(),
            positive_id: positive.0.into(),
            source_doc_id: positive.0.into(),
            label: Some(AnnotationLabel::Accept),
            trace: Vec::new(),
        },
        negatives: negatives
            .iter()
            .map(|(id, text)| Negative {
                id: id.clone(),
                text: text.clone(),
            })
            .collect(),
        difficulty: None,
        mining: MiningMetadata {
            k_negatives: negatives.len(),
            margin: 0.95,
            candidate_pool: 100,
            positive_score: 1.0,
            ceiling: 0.95,
            fill_rule: FillRule::RandomBelowCeiling,
            filled: 0,
        },
    }
}

/// Unit vector in `dim` dimensions with cosine `c` to axis `block`, using
/// axis `block + 1` for the remainder.
pub fn at_cos(dim: usize, block: usize, c: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[block] = c;
    v[block + 1] = (1.0 - c * c).max(0.0).sqrt();
    v
}
