//! Benchmark loading, de-duplication, instructed retrieval and NDCG scoring.

mod dedup;
mod instructions;
mod ndcg;
mod trec;

pub use dedup::{dedup_benchmark, DedupDelta};
pub use instructions::{instruction_for, BENCHMARK_INSTRUCTIONS};
pub use ndcg::{ndcg_at_k, score_run, NdcgScores, DEFAULT_NDCG_K};
pub use trec::{format_qrels, format_run, parse_qrels, parse_run, read_qrels, read_run, write_run};

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, Embedder, DEFAULT_BATCH};
use crate::par::par_map;
use crate::prompt::format_instructed_query;
use crate::retrieval::{ExactIndex, Hit, RetrievalError, RetrievalIndex};

pub type Qrels = BTreeMap<String, BTreeMap<String, u32>>;
/// Ranked hits per query id, best first.
pub type RetrievalRun = BTreeMap<String, Vec<Hit<f64>>>;

pub const DEFAULT_DEPTH: usize = 100;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("invalid benchmark: {0}")]
    Invalid(String),
    #[error("no instruction for benchmark {0:?}; add instruction.txt")]
    NoInstruction(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

impl EvalError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn in_file(self, path: &Path) -> Self {
        match self {
            e @ (EvalError::Io { .. } | EvalError::File { .. }) => e,
            other => EvalError::File {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalBenchmark {
    pub name: String,
    pub queries: Vec<TextRecord>,
    pub corpus: Vec<TextRecord>,
    pub qrels: Qrels,
    pub task_instruction: String,
}

impl EvalBenchmark {
    pub fn validate(&self) -> Result<(), EvalError> {
        let unique = |records: &[TextRecord], what: &str| -> Result<HashSet<String>, EvalError> {
            let mut ids = HashSet::new();
            for r in records {
                if !ids.insert(r.id.clone()) {
                    return Err(EvalError::Invalid(format!("duplicate {what} id {}", r.id)));
                }
            }
            Ok(ids)
        };
        let qids = unique(&self.queries, "query")?;
        let docids = unique(&self.corpus, "document")?;
        for (qid, docs) in &self.qrels {
            if !qids.contains(qid) {
                return Err(EvalError::Invalid(format!("qrels query {qid} not in queries")));
            }
            if let Some(d) = docs.keys().find(|d| !docids.contains(*d)) {
                return Err(EvalError::Invalid(format!("qrels document {d} not in corpus")));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(alias = "_id")]
    id: serde_json::Value,
    text: String,
}

fn id_string(v: serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

fn read_records(path: &Path) -> Result<Vec<TextRecord>, EvalError> {
    let raw: Vec<RawRecord> = crate::jsonl::read_jsonl(path).map_err(|e| EvalError::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(raw
        .into_iter()
        .map(|r| TextRecord {
            id: id_string(r.id),
            text: r.text,
        })
        .collect())
}

const QRELS_FILES: [&str; 3] = ["qrels.txt", "qrels.tsv", "qrels/test.tsv"];

/// Load `queries.jsonl`, `corpus.jsonl`, a qrels file and the instruction
/// (`instruction.txt`, else the built-in table keyed by directory name).
pub fn load_benchmark(dir: impl AsRef<Path>) -> Result<EvalBenchmark, EvalError> {
    let dir = dir.as_ref();
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let queries = read_records(&dir.join("queries.jsonl"))?;
    let corpus = read_records(&dir.join("corpus.jsonl"))?;
    let qrels_path = QRELS_FILES
        .iter()
        .map(|f| dir.join(f))
        .find(|p| p.is_file())
        .ok_or_else(|| EvalError::File {
            path: dir.to_path_buf(),
            message: format!("no qrels file (tried {})", QRELS_FILES.join(", ")),
        })?;
    let qrels = read_qrels(&qrels_path)?;
    let instruction_path = dir.join("instruction.txt");
    let task_instruction = if instruction_path.is_file() {
        std::fs::read_to_string(&instruction_path)
            .map_err(|e| EvalError::io(&instruction_path, e))?
            .trim()
            .to_string()
    } else {
        instruction_for(&name)
            .ok_or_else(|| EvalError::NoInstruction(name.clone()))?
            .to_string()
    };
    let b = EvalBenchmark {
        name,
        queries,
        corpus,
        qrels,
        task_instruction,
    };
    b.validate()?;
    Ok(b)
}

/// Write `b` in the layout [`load_benchmark`] reads: `queries.jsonl`,
/// `corpus.jsonl`, `qrels.txt` and `instruction.txt`.
pub fn write_benchmark(dir: impl AsRef<Path>, b: &EvalBenchmark) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    for (file, records) in [("queries.jsonl", &b.queries), ("corpus.jsonl", &b.corpus)] {
        let path = dir.join(file);
        let rows: Vec<serde_json::Value> = records
            .iter()
            .map(|r| serde_json::json!({"_id": r.id, "text": r.text}))
            .collect();
        crate::jsonl::write_jsonl(&path, &rows, false).map_err(|e| EvalError::File {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    let write = |file: &str, text: String| {
        let path = dir.join(file);
        std::fs::write(&path, text).map_err(|e| EvalError::io(&path, e))
    };
    write("qrels.txt", format_qrels(&b.qrels))?;
    write("instruction.txt", format!("{}\n", b.task_instruction))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutcome {
    pub run: RetrievalRun,
    /// Queries whose embedding failed, with the error.
    pub failures: BTreeMap<String, String>,
}

/// Embed each query as `<instruct> {instruction} <query> {text}` and each
/// document raw, then rank the corpus per query.
pub fn run_retrieval<E: Embedder + ?Sized>(
    b: &EvalBenchmark,
    embedder: &E,
    k: usize,
    jobs: usize,
) -> Result<RunOutcome, EvalError> {
    if b.corpus.is_empty() {
        return Err(EvalError::Retrieval(RetrievalError::EmptyCorpus));
    }
    let doc_texts: Vec<&str> = b.corpus.iter().map(|d| d.text.as_str()).collect();
    let batches: Vec<&[&str]> = doc_texts.chunks(DEFAULT_BATCH).collect();
    let mut doc_vecs = Vec::with_capacity(doc_texts.len());
    for r in par_map(&batches, jobs, |batch| crate::embed::embed_all(embedder, batch, DEFAULT_BATCH)) {
        doc_vecs.extend(r?);
    }
    let index = ExactIndex::build(b.corpus.iter().map(|d| d.id.clone()).zip(doc_vecs).collect())?;

    let instructed: Vec<String> = b
        .queries
        .iter()
        .map(|q| format_instructed_query(&b.task_instruction, &q.text).rendered)
        .collect();
    let results = par_map(&b.queries.iter().zip(&instructed).collect::<Vec<_>>(), jobs, |(q, text)| {
        let v = embedder
            .embed(&[text.as_str()])
            .map_err(|e| e.to_string())
            .and_then(|mut v| v.pop().ok_or_else(|| "embedder returned nothing".to_string()))?;
        index.search(&v, k).map_err(|e| e.to_string()).map(|hits| (q.id.clone(), hits))
    });

    let mut outcome = RunOutcome::default();
    for (q, r) in b.queries.iter().zip(results) {
        match r {
            Ok((qid, hits)) => {
                outcome.run.insert(qid, hits);
            }
            Err(e) => {
                log::warn!("{}: query {}: {e}", b.name, q.id);
                outcome.failures.insert(q.id.clone(), e);
            }
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub dedup: bool,
    /// NDCG cutoff.
    pub k: usize,
    /// Retrieval depth written to run files; at least `k`.
    pub depth: usize,
    pub jobs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            dedup: false,
            k: DEFAULT_NDCG_K,
            depth: DEFAULT_DEPTH,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub benchmark: String,
    pub ndcg: Option<f64>,
    pub k: usize,
    pub queries: usize,
    pub judged_queries: usize,
    pub corpus_size: usize,
    pub dedup: Option<DedupDelta>,
    pub failed_queries: usize,
    pub error: Option<String>,
}

impl BenchmarkRow {
    pub fn failed(benchmark: &str, k: usize, error: String) -> Self {
        Self {
            benchmark: benchmark.to_string(),
            ndcg: None,
            k,
            queries: 0,
            judged_queries: 0,
            corpus_size: 0,
            dedup: None,
            failed_queries: 0,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub rows: Vec<BenchmarkRow>,
    /// Mean NDCG over benchmarks that produced a score.
    pub macro_average: Option<f64>,
}

impl EvalReport {
    pub fn from_rows(k: usize, rows: Vec<BenchmarkRow>) -> Self {
        let scores: Vec<f64> = rows.iter().filter_map(|r| r.ndcg).collect();
        let macro_average =
            (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
        Self {
            k,
            rows,
            macro_average,
        }
    }

    pub fn table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.benchmark.len())
            .chain([9])
            .max()
            .unwrap_or(9);
        let header = format!("NDCG@{}", self.k);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>7}  {:>8}  {:>9}  {:>9}",
            "benchmark", header, "queries", "corpus", "q_removed", "d_removed"
        );
        for r in &self.rows {
            let score = r.ndcg.map_or_else(|| "error".to_string(), |v| format!("{:.4}", v));
            let (qr, dr) = r
                .dedup
                .map_or(("-".to_string(), "-".to_string()), |d| {
                    (d.queries_removed.to_string(), d.docs_removed.to_string())
                });
            let _ = writeln!(
                out,
                "{:<width$}  {:>9}  {:>7}  {:>8}  {:>9}  {:>9}",
                r.benchmark, score, r.queries, r.corpus_size, qr, dr
            );
        }
        let avg = self
            .macro_average
            .map_or_else(|| "-".to_string(), |v| format!("{:.4}", v));
        let _ = writeln!(out, "{:<width$}  {:>9}", "average", avg);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub runs: BTreeMap<String, RetrievalRun>,
}

fn evaluate_one<E: Embedder + ?Sized>(
    b: &EvalBenchmark,
    embedder: &E,
    opts: &EvalOptions,
) -> Result<(BenchmarkRow, RetrievalRun), EvalError> {
    let (bench, delta) = if opts.dedup {
        let (d, delta) = dedup_benchmark(b);
        (d, Some(delta))
    } else {
        (b.clone(), None)
    };
    let outcome = run_retrieval(&bench, embedder, opts.depth.max(opts.k), opts.jobs)?;
    let scores = score_run(&outcome.run, &bench.qrels, opts.k)?;
    Ok((
        BenchmarkRow {
            benchmark: bench.name.clone(),
            ndcg: Some(scores.mean),
            k: opts.k,
            queries: bench.queries.len(),
            judged_queries: scores.per_query.len(),
            corpus_size: bench.corpus.len(),
            dedup: delta,
            failed_queries: outcome.failures.len(),
            error: None,
        },
        outcome.run,
    ))
}

/// Score every benchmark; a failing benchmark yields an error row and does
/// not stop the others.
pub fn evaluate<E: Embedder + ?Sized>(
    benchmarks: &[EvalBenchmark],
    embedder: &E,
    opts: &EvalOptions,
) -> EvalOutcome {
    let mut rows = Vec::new();
    let mut runs = BTreeMap::new();
    for b in benchmarks {
        match evaluate_one(b, embedder, opts) {
            Ok((row, run)) => {
                runs.insert(b.name.clone(), run);
                rows.push(row);
            }
            Err(e) => {
                log::error!("{}: {e}", b.name);
                rows.push(BenchmarkRow::failed(&b.name, opts.k, e.to_string()));
            }
        }
    }
    EvalOutcome {
        report: EvalReport::from_rows(opts.k, rows),
        runs,
    }
}
