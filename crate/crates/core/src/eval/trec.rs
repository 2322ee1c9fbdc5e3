//! TREC qrels (`qid 0 docid rel`) and run (`qid Q0 docid rank score tag`) files.

use std::fmt::Write as _;
use std::path::Path;

use super::{EvalError, Qrels, RetrievalRun};
use crate::retrieval::Hit;

/// Parse qrels. Accepts the four-column TREC layout and the three-column
/// `query-id corpus-id score` TSV layout (with or without a header line).
pub fn parse_qrels(text: &str) -> Result<Qrels, EvalError> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let (qid, docid, rel) = match fields.as_slice() {
            [] => continue,
            [q, _, d, r] => (q, d, r),
            [q, d, r] => (q, d, r),
            _ => {
                return Err(EvalError::Parse {
                    line: i + 1,
                    message: format!("expected 3 or 4 fields, got {}", fields.len()),
                })
            }
        };
        let rel: u32 = match rel.parse() {
            Ok(r) => r,
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(EvalError::Parse {
                    line: i + 1,
                    message: format!("relevance {rel:?} is not a non-negative integer"),
                })
            }
        };
        let slot = qrels
            .entry(qid.to_string())
            .or_default()
            .entry(docid.to_string())
            .or_insert(0);
        *slot = (*slot).max(rel);
    }
    Ok(qrels)
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<Qrels, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    parse_qrels(&text).map_err(|e| e.in_file(path))
}

pub fn format_qrels(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (qid, docs) in qrels {
        for (docid, rel) in docs {
            let _ = writeln!(out, "{qid} 0 {docid} {rel}");
        }
    }
    out
}

pub fn format_run(run: &RetrievalRun, tag: &str) -> String {
    let mut out = String::new();
    for (qid, hits) in run {
        for (rank, h) in hits.iter().enumerate() {
            let _ = writeln!(out, "{qid} Q0 {} {} {:.6} {tag}", h.id, rank + 1, h.score);
        }
    }
    out
}

pub fn write_run(path: impl AsRef<Path>, run: &RetrievalRun, tag: &str) -> Result<(), EvalError> {
    let path = path.as_ref();
    std::fs::write(path, format_run(run, tag)).map_err(|e| EvalError::io(path, e))
}

/// Parse a run file; per query, hits are ordered by rank and repeated
/// docids keep their first occurrence.
pub fn parse_run(text: &str) -> Result<RetrievalRun, EvalError> {
    let mut rows: Vec<(String, usize, String, f64)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let bad = |message: String| EvalError::Parse {
            line: i + 1,
            message,
        };
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", f.len())));
        }
        let rank = f[3].parse().map_err(|_| bad(format!("bad rank {:?}", f[3])))?;
        let score = f[4].parse().map_err(|_| bad(format!("bad score {:?}", f[4])))?;
        rows.push((f[0].to_string(), rank, f[2].to_string(), score));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut run = RetrievalRun::new();
    for (qid, _, id, score) in rows {
        let hits = run.entry(qid).or_default();
        if !hits.iter().any(|h: &Hit<f64>| h.id == id) {
            hits.push(Hit { id, score });
        }
    }
    Ok(run)
}

pub fn read_run(path: impl AsRef<Path>) -> Result<RetrievalRun, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    parse_run(&text).map_err(|e| e.in_file(path))
}
