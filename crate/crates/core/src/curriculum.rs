//! Three-stage training plan (text-only, mixed, code-only) and the two
//! stage-3 data filters.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TrainingSample;
use crate::embed::{embed_all, EmbedError, Embedder, DEFAULT_BATCH};
use crate::eval::TextRecord;
use crate::gateway::{parse_difficulty, CompletionRequest, Difficulty, Gateway};
use crate::jsonl::{self, JsonlError};
use crate::par::par_map;
use crate::prompt::render_difficulty_prompt;
use crate::registry::Registry;
use crate::retrieval::{ExactIndex, RetrievalError};

pub const DEFAULT_LR1: f64 = 1e-4;
pub const DEFAULT_LR3: f64 = 1e-5;
pub const DEFAULT_TOP_N: usize = 3;
pub const DEFAULT_MAX_SEQUENCE_LENGTH: usize = 512;

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("stage 2/3 require code data")]
    MissingCode,
    #[error("stage 1/2 require text data")]
    MissingText,
    #[error("invalid source {path}: {message}")]
    InvalidSource { path: String, message: String },
    #[error("invalid learning rate {0}")]
    LearningRate(f64),
    #[error("stage {stage} manifest: {message}")]
    Stage { stage: u8, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("top_n must be at least 1")]
    ZeroTopN,
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSourceKind {
    TextRetrieval,
    TextSts,
    CodeExisting,
    CodeSynthetic,
}

impl DataSourceKind {
    pub fn is_text(self) -> bool {
        matches!(self, DataSourceKind::TextRetrieval | DataSourceKind::TextSts)
    }

    pub fn is_code(self) -> bool {
        !self.is_text()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DataSourceKind::TextRetrieval => "text_retrieval",
            DataSourceKind::TextSts => "text_sts",
            DataSourceKind::CodeExisting => "code_existing",
            DataSourceKind::CodeSynthetic => "code_synthetic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            DataSourceKind::TextRetrieval,
            DataSourceKind::TextSts,
            DataSourceKind::CodeExisting,
            DataSourceKind::CodeSynthetic,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSourceEntry {
    pub path: String,
    pub kind: DataSourceKind,
    pub sample_count: u64,
    pub weight: f64,
}

impl DataSourceEntry {
    pub fn new(path: impl Into<String>, kind: DataSourceKind, sample_count: u64) -> Self {
        Self {
            path: path.into(),
            kind,
            sample_count,
            weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), CurriculumError> {
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(CurriculumError::InvalidSource {
                path: self.path.clone(),
                message: format!("weight must be positive, got {}", self.weight),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum FilterDescriptor {
    /// Drop samples whose positive ranks within `top_n` for its own query.
    E5Simple { top_n: usize },
    /// Keep samples judged to be of one of these difficulties.
    Difficulty { retain: Vec<Difficulty> },
}

impl FilterDescriptor {
    pub fn stage3_defaults() -> Vec<FilterDescriptor> {
        vec![
            FilterDescriptor::E5Simple {
                top_n: DEFAULT_TOP_N,
            },
            FilterDescriptor::Difficulty {
                retain: vec![Difficulty::Medium, Difficulty::Hard],
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: u8,
    pub entries: Vec<DataSourceEntry>,
    pub learning_rate_hint: f64,
    pub filters_applied: Vec<FilterDescriptor>,
    pub max_sequence_length: usize,
}

impl StageManifest {
    pub fn sample_count(&self) -> u64 {
        self.entries.iter().map(|e| e.sample_count).sum()
    }
}

/// Check the per-stage kind constraints and entry validity.
pub fn check_stage(m: &StageManifest) -> Result<(), CurriculumError> {
    let fail = |message: &str| CurriculumError::Stage {
        stage: m.stage,
        message: message.to_string(),
    };
    for e in &m.entries {
        e.validate()?;
    }
    if !(m.learning_rate_hint > 0.0 && m.learning_rate_hint.is_finite()) {
        return Err(CurriculumError::LearningRate(m.learning_rate_hint));
    }
    let any_text = m.entries.iter().any(|e| e.kind.is_text());
    let any_code = m.entries.iter().any(|e| e.kind.is_code());
    match m.stage {
        1 if any_code => Err(fail("stage 1 admits text entries only")),
        1 if !any_text => Err(fail("stage 1 has no entries")),
        2 if !(any_text && any_code) => Err(fail("stage 2 needs both text and code entries")),
        3 if any_text => Err(fail("stage 3 admits code entries only")),
        3 if !any_code => Err(fail("stage 3 has no entries")),
        1..=3 => Ok(()),
        _ => Err(fail("stage must be 1, 2 or 3")),
    }
}

/// Split `sources` into the three stage manifests with learning-rate hints
/// `(lr1, lr1, lr3)`. Stage 3 carries the default stage-3 filter descriptors.
pub fn plan_stages(
    sources: &[DataSourceEntry],
    lr1: f64,
    lr3: f64,
) -> Result<[StageManifest; 3], CurriculumError> {
    for lr in [lr1, lr3] {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(CurriculumError::LearningRate(lr));
        }
    }
    for s in sources {
        s.validate()?;
    }
    if !sources.iter().any(|s| s.kind.is_code()) {
        return Err(CurriculumError::MissingCode);
    }
    if !sources.iter().any(|s| s.kind.is_text()) {
        return Err(CurriculumError::MissingText);
    }
    let pick = |f: fn(DataSourceKind) -> bool| -> Vec<DataSourceEntry> {
        sources.iter().filter(|s| f(s.kind)).cloned().collect()
    };
    let manifest = |stage, entries, lr, filters_applied| StageManifest {
        stage,
        entries,
        learning_rate_hint: lr,
        filters_applied,
        max_sequence_length: DEFAULT_MAX_SEQUENCE_LENGTH,
    };
    let plan = [
        manifest(1, pick(DataSourceKind::is_text), lr1, Vec::new()),
        manifest(2, sources.to_vec(), lr1, Vec::new()),
        manifest(
            3,
            pick(DataSourceKind::is_code),
            lr3,
            FilterDescriptor::stage3_defaults(),
        ),
    ];
    for m in &plan {
        check_stage(m)?;
    }
    Ok(plan)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ManifestRecord {
    Header {
        stage: u8,
        lr_hint: f64,
        filters: Vec<FilterDescriptor>,
        max_sequence_length: usize,
    },
    Entry(DataSourceEntry),
}

/// Write a manifest as a header record followed by one record per entry.
pub fn write_manifest(path: impl AsRef<Path>, m: &StageManifest) -> Result<(), CurriculumError> {
    check_stage(m)?;
    let mut records = vec![ManifestRecord::Header {
        stage: m.stage,
        lr_hint: m.learning_rate_hint,
        filters: m.filters_applied.clone(),
        max_sequence_length: m.max_sequence_length,
    }];
    records.extend(m.entries.iter().cloned().map(ManifestRecord::Entry));
    Ok(jsonl::write_jsonl(path, &records, false)?)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<StageManifest, CurriculumError> {
    let mut records = jsonl::read_jsonl::<ManifestRecord>(path)?.into_iter();
    let Some(ManifestRecord::Header {
        stage,
        lr_hint,
        filters,
        max_sequence_length,
    }) = records.next()
    else {
        return Err(CurriculumError::Manifest("first record must be the header".into()));
    };
    let entries = records
        .map(|r| match r {
            ManifestRecord::Entry(e) => Ok(e),
            ManifestRecord::Header { .. } => Err(CurriculumError::Manifest("second header record".into())),
        })
        .collect::<Result<_, _>>()?;
    let m = StageManifest {
        stage,
        entries,
        learning_rate_hint: lr_hint,
        filters_applied: filters,
        max_sequence_length,
    };
    check_stage(&m)?;
    Ok(m)
}

/// Default filter corpus: every positive and mined negative in `samples`,
/// first occurrence per id.
pub fn filter_corpus(samples: &[TrainingSample]) -> Vec<TextRecord> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in samples {
        let docs = std::iter::once((&s.pair.positive_id, &s.pair.positive))
            .chain(s.negatives.iter().map(|n| (&n.id, &n.text)));
        for (id, text) in docs {
            if seen.insert(id.clone()) {
                out.push(TextRecord {
                    id: id.clone(),
                    text: text.clone(),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct E5FilterOutcome {
    pub retained: Vec<TrainingSample>,
    /// `(pair_id, rank)` of dropped samples.
    pub dropped: Vec<(String, usize)>,
    /// Retained samples whose positive is missing from the filter corpus.
    pub flagged: Vec<String>,
}

fn embed_parallel<E: Embedder + ?Sized>(
    embedder: &E,
    texts: &[&str],
    jobs: usize,
) -> Result<Vec<crate::Embedding>, EmbedError> {
    let batches: Vec<&[&str]> = texts.chunks(DEFAULT_BATCH).collect();
    let mut out = Vec::with_capacity(texts.len());
    for r in par_map(&batches, jobs, |b| embed_all(embedder, b, DEFAULT_BATCH)) {
        out.extend(r?);
    }
    Ok(out)
}

/// Drop every sample whose positive ranks at or above `top_n` when its raw
/// query is run against `corpus` (defaults to [`filter_corpus`]). Ranks
/// follow the retrieval order: descending cosine, then ascending id.
pub fn e5_simple_filter<E: Embedder + ?Sized>(
    samples: Vec<TrainingSample>,
    corpus: Option<&[TextRecord]>,
    embedder: &E,
    top_n: usize,
    jobs: usize,
) -> Result<E5FilterOutcome, CurriculumError> {
    if top_n == 0 {
        return Err(CurriculumError::ZeroTopN);
    }
    let mut outcome = E5FilterOutcome {
        retained: Vec::new(),
        dropped: Vec::new(),
        flagged: Vec::new(),
    };
    if samples.is_empty() {
        return Ok(outcome);
    }
    let owned;
    let corpus = match corpus {
        Some(c) => c,
        None => {
            owned = filter_corpus(&samples);
            &owned
        }
    };
    let doc_texts: Vec<&str> = corpus.iter().map(|d| d.text.as_str()).collect();
    let doc_vecs = embed_parallel(embedder, &doc_texts, jobs)?;
    let index = ExactIndex::build(corpus.iter().map(|d| d.id.clone()).zip(doc_vecs).collect())?;
    let position: HashMap<&str, usize> = index
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let queries: Vec<&str> = samples.iter().map(|s| s.pair.query.as_str()).collect();
    let query_vecs = embed_parallel(embedder, &queries, jobs)?;
    let ranks = par_map(
        &samples.iter().zip(&query_vecs).collect::<Vec<_>>(),
        jobs,
        |(s, q)| -> Result<Option<usize>, RetrievalError> {
            let Some(&p) = position.get(s.pair.positive_id.as_str()) else {
                return Ok(None);
            };
            let scores = index.scores(q)?;
            let ids = index.ids();
            let ahead = scores
                .iter()
                .enumerate()
                .filter(|&(i, &v)| v > scores[p] || (v == scores[p] && ids[i] < ids[p]))
                .count();
            Ok(Some(ahead + 1))
        },
    );

    for (s, rank) in samples.into_iter().zip(ranks) {
        match rank? {
            Some(r) if r <= top_n => outcome.dropped.push((s.pair.pair_id, r)),
            Some(_) => outcome.retained.push(s),
            None => {
                log::warn!("sample {}: positive absent from filter corpus", s.pair.pair_id);
                outcome.flagged.push(s.pair.pair_id.clone());
                outcome.retained.push(s);
            }
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyCounts {
    pub error_data: usize,
    pub simple: usize,
    pub medium: usize,
    pub hard: usize,
    pub malformed: usize,
}

impl DifficultyCounts {
    fn add(&mut self, d: Difficulty) {
        match d {
            Difficulty::ErrorData => self.error_data += 1,
            Difficulty::Simple => self.simple += 1,
            Difficulty::Medium => self.medium += 1,
            Difficulty::Hard => self.hard += 1,
            Difficulty::Malformed => self.malformed += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DifficultyOutcome {
    pub retained: Vec<TrainingSample>,
    pub counts: DifficultyCounts,
    /// Samples whose judgment failed (gateway or prompt error); counted as malformed.
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyOptions {
    pub model: String,
    pub seed: Option<u64>,
    pub jobs: usize,
}

fn judge<G: Gateway + ?Sized>(
    s: &TrainingSample,
    registry: &Registry,
    gateway: &G,
    opts: &DifficultyOptions,
) -> Result<Difficulty, String> {
    let task = registry.get_task(&s.pair.task_name).map_err(|e| e.to_string())?;
    let bindings = s
        .pair
        .bindings(task.programming_language_slots)
        .ok_or_else(|| format!("language cell {:?} does not fit the task", s.pair.programming_languages))?;
    let prompt = render_difficulty_prompt(task, &bindings, &s.pair.query, &s.pair.positive)
        .map_err(|e| e.to_string())?;
    let request = CompletionRequest::new(prompt, opts.model.clone()).with_seed(opts.seed);
    let completion = gateway.complete(&request).map_err(|e| e.to_string())?;
    Ok(parse_difficulty(&completion.text))
}

/// Judge each sample's difficulty and keep only Medium and Hard ones, with
/// the difficulty field set.
pub fn difficulty_filter<G: Gateway + ?Sized>(
    samples: Vec<TrainingSample>,
    registry: &Registry,
    gateway: &G,
    opts: &DifficultyOptions,
) -> DifficultyOutcome {
    let judged = par_map(&samples, opts.jobs, |s| judge(s, registry, gateway, opts));
    let mut outcome = DifficultyOutcome {
        retained: Vec::new(),
        counts: DifficultyCounts::default(),
        failures: Vec::new(),
    };
    for (mut s, j) in samples.into_iter().zip(judged) {
        let d = j.unwrap_or_else(|e| {
            log::warn!("sample {}: difficulty judgment failed: {e}", s.pair.pair_id);
            outcome.failures.push((s.pair.pair_id.clone(), e));
            Difficulty::Malformed
        });
        outcome.counts.add(d);
        if d.is_retained() {
            s.difficulty = Some(d);
            outcome.retained.push(s);
        }
    }
    outcome
}
