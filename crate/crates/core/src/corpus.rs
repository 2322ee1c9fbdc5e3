//! Source-code corpus ingestion and sampling, plus the persisted pair and
//! triplet records.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{AnnotationLabel, Difficulty};
use crate::hash::stable_hash;
use crate::jsonl::{self, JsonlError, JsonlWriter};
use crate::mining::FillRule;
use crate::prompt::TemplateId;
use crate::registry::{Bindings, LanguageSlots, NaturalLanguage, Registry};

pub const DEFAULT_MIN_CHARS: usize = 50;
pub const DEFAULT_MAX_CHARS: usize = 100_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("no documents in language {0}")]
    NoMatch(String),
    #[error("n must be at least 1")]
    ZeroSample,
    #[error("invalid sample: {0}")]
    InvalidSample(String),
}

/// Content-addressed id: depends only on language and content.
pub fn document_id(language: &str, content: &str) -> String {
    stable_hash(&[language, content])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeDocument {
    pub id: String,
    pub content: String,
    pub programming_language: String,
    pub source_ref: String,
    pub char_length: usize,
}

impl CodeDocument {
    pub fn new(content: String, programming_language: String, source_ref: String) -> Self {
        Self {
            id: document_id(&programming_language, &content),
            char_length: content.chars().count(),
            content,
            programming_language,
            source_ref,
        }
    }
}

#[derive(Debug, Deserialize)]
struct CorpusRecord {
    #[serde(default, rename = "id")]
    _id: Option<serde_json::Value>,
    language: Option<String>,
    content: Option<String>,
    #[serde(default)]
    source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOptions {
    pub language_filter: Option<String>,
    pub min_chars: usize,
    pub max_chars: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            language_filter: None,
            min_chars: DEFAULT_MIN_CHARS,
            max_chars: DEFAULT_MAX_CHARS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records: usize,
    pub kept: usize,
    pub filtered_language: usize,
    pub unknown_language: usize,
    pub too_short: usize,
    pub too_long: usize,
}

/// Streaming reader over a corpus JSON-lines file. Provided ids are ignored;
/// ids are always recomputed from content and canonical language.
pub struct Ingest<'r, R> {
    lines: std::iter::Enumerate<std::io::Lines<R>>,
    registry: &'r Registry,
    filter: Option<String>,
    options: IngestOptions,
    stats: IngestStats,
    path: std::path::PathBuf,
}

impl<'r, R: BufRead> Ingest<'r, R> {
    pub fn new(
        reader: R,
        path: &Path,
        registry: &'r Registry,
        options: IngestOptions,
    ) -> Result<Self, CorpusError> {
        let filter = match &options.language_filter {
            Some(l) => Some(
                registry
                    .canonical_language(l)
                    .ok_or_else(|| CorpusError::NoMatch(l.clone()))?
                    .to_string(),
            ),
            None => None,
        };
        Ok(Self {
            lines: reader.lines().enumerate(),
            registry,
            filter,
            options,
            stats: IngestStats::default(),
            path: path.to_path_buf(),
        })
    }

    pub fn stats(&self) -> &IngestStats {
        &self.stats
    }
}

impl<R: BufRead> Iterator for Ingest<'_, R> {
    type Item = Result<CodeDocument, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        for (i, line) in self.lines.by_ref() {
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(JsonlError::io(&self.path, e).into())),
            };
            if line.trim().is_empty() {
                continue;
            }
            self.stats.records += 1;
            let rec: CorpusRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => return Some(Err(JsonlError::record(&self.path, i + 1, e.to_string()).into())),
            };
            let (Some(language), Some(content)) = (rec.language, rec.content) else {
                return Some(Err(
                    JsonlError::record(&self.path, i + 1, "record needs \"language\" and \"content\"").into(),
                ));
            };
            let Some(language) = self.registry.canonical_language(&language) else {
                self.stats.unknown_language += 1;
                log::debug!("line {}: skipping unknown language {language:?}", i + 1);
                continue;
            };
            if self.filter.as_deref().is_some_and(|f| f != language) {
                self.stats.filtered_language += 1;
                continue;
            }
            let len = content.chars().count();
            if len < self.options.min_chars {
                self.stats.too_short += 1;
                continue;
            }
            if len > self.options.max_chars {
                self.stats.too_long += 1;
                continue;
            }
            self.stats.kept += 1;
            let source = rec
                .source
                .unwrap_or_else(|| format!("{}:{}", self.path.display(), i + 1));
            return Some(Ok(CodeDocument::new(content, language.to_string(), source)));
        }
        None
    }
}

pub fn ingest_corpus(
    path: impl AsRef<Path>,
    registry: &Registry,
    options: IngestOptions,
) -> Result<(Corpus, IngestStats), CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    let mut ingest = Ingest::new(BufReader::new(file), path, registry, options)?;
    let docs = ingest.by_ref().collect::<Result<Vec<_>, _>>()?;
    let stats = ingest.stats().clone();
    Ok((Corpus::from_documents(docs), stats))
}

/// In-memory corpus keyed by language. Duplicate ids keep the first copy.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<CodeDocument>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentSample {
    pub documents: Vec<CodeDocument>,
    /// Fewer matching documents than requested.
    pub shortage: bool,
}

impl Corpus {
    pub fn from_documents(docs: impl IntoIterator<Item = CodeDocument>) -> Self {
        let mut seen = HashSet::new();
        Self {
            docs: docs.into_iter().filter(|d| seen.insert(d.id.clone())).collect(),
        }
    }

    pub fn documents(&self) -> &[CodeDocument] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn of_language<'a>(&'a self, language: &'a str) -> impl Iterator<Item = &'a CodeDocument> + 'a {
        self.docs
            .iter()
            .filter(move |d| d.programming_language == language)
    }

    pub fn language_counts(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for d in &self.docs {
            *m.entry(d.programming_language.as_str()).or_insert(0) += 1;
        }
        m
    }
}

/// Uniform sample without replacement. Candidates are ordered by id before
/// drawing, so the result does not depend on ingestion order.
pub fn sample_documents(
    corpus: &Corpus,
    n: usize,
    language: &str,
    seed: u64,
) -> Result<DocumentSample, CorpusError> {
    if n == 0 {
        return Err(CorpusError::ZeroSample);
    }
    let mut pool: Vec<&CodeDocument> = corpus.of_language(language).collect();
    if pool.is_empty() {
        return Err(CorpusError::NoMatch(language.to_string()));
    }
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    let take = n.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let documents = sample_indices(&mut rng, pool.len(), take)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    Ok(DocumentSample {
        documents,
        shortage: take < n,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: String,
    pub template: TemplateId,
    pub prompt_hash: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPositivePair {
    /// Hash of (task, source document, natural language, language cell).
    pub pair_id: String,
    pub task_name: String,
    pub natural_language: NaturalLanguage,
    /// `[language]`, or `[source, target]` for translation tasks.
    pub programming_languages: Vec<String>,
    /// Task instruction with language slots resolved; pairs with the query
    /// to build the instructed query.
    pub task_instruction: String,
    pub query: String,
    pub positive: String,
    pub positive_id: String,
    pub source_doc_id: String,
    pub label: Option<AnnotationLabel>,
    pub trace: Vec<TraceEntry>,
}

impl QueryPositivePair {
    /// Placeholder bindings for the pair's language cell.
    pub fn bindings(&self, slots: LanguageSlots) -> Option<Bindings> {
        match (slots, self.programming_languages.as_slice()) {
            (LanguageSlots::Single, [pl]) => Some(Bindings::single(pl, self.natural_language)),
            (LanguageSlots::SourceTarget, [src, tgt]) => {
                Some(Bindings::translation(src, tgt, self.natural_language))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Negative {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningMetadata {
    pub k_negatives: usize,
    pub margin: f64,
    pub candidate_pool: usize,
    pub positive_score: f64,
    pub ceiling: f64,
    pub fill_rule: FillRule,
    /// Negatives contributed by the fill rule rather than the candidate pool.
    pub filled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    #[serde(flatten)]
    pub pair: QueryPositivePair,
    pub negatives: Vec<Negative>,
    pub difficulty: Option<Difficulty>,
    pub mining: MiningMetadata,
}

impl TrainingSample {
    pub fn validate(&self) -> Result<(), String> {
        if self.pair.label != Some(AnnotationLabel::Accept) {
            return Err(format!("pair {} is not accepted", self.pair.pair_id));
        }
        if self.negatives.len() != self.mining.k_negatives {
            return Err(format!(
                "expected {} negatives, found {}",
                self.mining.k_negatives,
                self.negatives.len()
            ));
        }
        let mut ids = HashSet::new();
        for n in &self.negatives {
            if !ids.insert(n.id.as_str()) {
                return Err(format!("duplicate negative id {}", n.id));
            }
            if n.id == self.pair.positive_id || n.text == self.pair.positive {
                return Err(format!("negative {} equals the positive", n.id));
            }
        }
        Ok(())
    }
}

pub fn write_samples(
    path: impl AsRef<Path>,
    samples: &[TrainingSample],
    append: bool,
) -> Result<(), CorpusError> {
    for s in samples {
        s.validate().map_err(CorpusError::InvalidSample)?;
    }
    Ok(jsonl::write_jsonl(path, samples, append)?)
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<TrainingSample>, CorpusError> {
    Ok(jsonl::read_jsonl_with(path, TrainingSample::validate)?)
}

/// Appending sample writer that validates every record.
pub struct SampleWriter {
    inner: JsonlWriter,
}

impl SampleWriter {
    pub fn create(path: impl AsRef<Path>, append: bool) -> Result<Self, CorpusError> {
        Ok(Self {
            inner: JsonlWriter::create(path, append)?,
        })
    }

    pub fn write(&mut self, sample: &TrainingSample) -> Result<(), CorpusError> {
        sample.validate().map_err(CorpusError::InvalidSample)?;
        Ok(self.inner.write(sample)?)
    }
}
