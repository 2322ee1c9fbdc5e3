//! Pair generation, annotation gating and triplet assembly, run per task
//! cell with checkpointed resume. Also hosts task brainstorming.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    document_id, sample_documents, write_samples, CodeDocument, Corpus, CorpusError, DocumentSample, Negative,
    QueryPositivePair, TraceEntry, TrainingSample,
};
use crate::embed::Embedder;
use crate::gateway::{
    parse_annotation, parse_brainstorm, AnnotationLabel, CompletionRequest, Gateway, GatewayError,
    DEFAULT_MAX_OUTPUT_TOKENS,
};
use crate::hash::{seed_from, stable_hash};
use crate::jsonl::{self, JsonlError, JsonlWriter};
use crate::mining::{mine_hard_negatives, MiningConfig, MiningError, MiningRequest, NegativePool};
use crate::par::par_map;
use crate::prompt::{
    render_annotation_prompt, render_brainstorm_prompt, render_generation_prompt, PromptError, PromptText,
};
use crate::registry::{
    Bindings, InputRole, LanguageSlots, MajorTaskType, NaturalLanguage, PairPart, Registry, RegistryError,
    TaskSpec,
};

/// Documents drawn per cell, as a multiple of the per-cell quota.
pub const ATTEMPT_FACTOR: usize = 3;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{step}: {source}")]
    Gateway { step: String, source: GatewayError },
    #[error("{step}: empty model output")]
    EmptyOutput { step: String },
    #[error("precondition: {0}")]
    Precondition(String),
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// Decoding settings shared by every completion request of a run.
/// `temperature` applies to generation calls; annotation always runs at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOptions {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub seed: Option<u64>,
    /// Ask once more when an annotation response is malformed.
    pub retry_malformed: bool,
}

impl GenerationOptions {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            seed: None,
            retry_malformed: false,
        }
    }

    fn judging(&self) -> Self {
        Self {
            temperature: 0.0,
            ..self.clone()
        }
    }

    fn request(&self, prompt: PromptText) -> CompletionRequest {
        let mut r = CompletionRequest::new(prompt, self.model.clone())
            .with_temperature(self.temperature)
            .with_seed(self.seed);
        r.max_output_tokens = self.max_output_tokens;
        r
    }
}

/// One (task, natural language, programming language cell) combination.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskCell {
    pub task: String,
    pub natural_language: NaturalLanguage,
    /// `[language]`, or `[source, target]` for translation tasks.
    pub programming_languages: Vec<String>,
}

impl TaskCell {
    pub fn bindings(&self) -> Bindings {
        match self.programming_languages.as_slice() {
            [src, tgt] => Bindings::translation(src, tgt, self.natural_language),
            langs => Bindings::single(&langs[0], self.natural_language),
        }
    }

    /// Language of the sampled documents.
    pub fn source_language(&self) -> &str {
        &self.programming_languages[0]
    }

    /// Language of the negative pool.
    pub fn target_language(&self) -> &str {
        self.programming_languages.last().map_or("", String::as_str)
    }

    pub fn label(&self) -> String {
        format!(
            "{} / {} / {}",
            self.task,
            self.natural_language,
            self.programming_languages.join(" -> ")
        )
    }

    /// Checkpoint key and pair id for a document processed in this cell.
    pub fn item_key(&self, doc_id: &str) -> String {
        stable_hash(&[
            &self.task,
            doc_id,
            self.natural_language.as_str(),
            &self.programming_languages.join("\u{1f}"),
        ])
    }

    fn of_pair(pair: &QueryPositivePair) -> Self {
        Self {
            task: pair.task_name.clone(),
            natural_language: pair.natural_language,
            programming_languages: pair.programming_languages.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    pub tasks: Vec<String>,
    pub natural_languages: Vec<NaturalLanguage>,
    pub programming_languages: Vec<String>,
    /// Explicit `(source, target)` cells for translation tasks. When empty,
    /// every ordered pair of distinct `programming_languages` is used.
    pub translation_pairs: Vec<(String, String)>,
    /// Accepted pairs wanted per cell.
    pub samples_per_cell: usize,
    /// Documents drawn per cell; defaults to `ATTEMPT_FACTOR` times the quota.
    pub max_attempts_per_cell: Option<usize>,
    pub seed: u64,
    pub generation: GenerationOptions,
    pub mining: MiningConfig,
    pub jobs: usize,
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.samples_per_cell == 0 {
            return Err(SynthError::Config("samples_per_cell must be at least 1".into()));
        }
        if self.max_attempts_per_cell == Some(0) {
            return Err(SynthError::Config("max_attempts_per_cell must be at least 1".into()));
        }
        if self.tasks.is_empty() {
            return Err(SynthError::Config("no tasks selected".into()));
        }
        if self.natural_languages.is_empty() {
            return Err(SynthError::Config("no natural language selected".into()));
        }
        if let Some((s, _)) = self.translation_pairs.iter().find(|(s, t)| s.eq_ignore_ascii_case(t)) {
            return Err(SynthError::Config(format!(
                "translation pair {s} -> {s} needs distinct languages"
            )));
        }
        self.mining.validate()?;
        Ok(())
    }

    /// Expand the configuration into cells, in task order.
    pub fn cells(&self, registry: &Registry) -> Result<Vec<TaskCell>, SynthError> {
        self.validate()?;
        let canon = |l: &str| {
            registry
                .canonical_language(l)
                .map(str::to_string)
                .ok_or_else(|| SynthError::Config(format!("unknown programming language {l:?}")))
        };
        let pls = self.programming_languages.iter().map(|l| canon(l)).collect::<Result<Vec<_>, _>>()?;
        let pairs: Vec<Vec<String>> = if self.translation_pairs.is_empty() {
            pls.iter()
                .flat_map(|s| pls.iter().filter(move |t| *t != s).map(move |t| vec![s.clone(), t.clone()]))
                .collect()
        } else {
            self.translation_pairs
                .iter()
                .map(|(s, t)| Ok(vec![canon(s)?, canon(t)?]))
                .collect::<Result<_, SynthError>>()?
        };

        let mut cells = Vec::new();
        for name in &self.tasks {
            let task = registry.get_task(name)?;
            let langs: Vec<Vec<String>> = match task.programming_language_slots {
                LanguageSlots::Single => pls.iter().map(|l| vec![l.clone()]).collect(),
                LanguageSlots::SourceTarget => pairs.clone(),
            };
            if langs.is_empty() {
                return Err(SynthError::Config(format!(
                    "task {name:?} needs {}",
                    match task.programming_language_slots {
                        LanguageSlots::Single => "at least one programming language",
                        LanguageSlots::SourceTarget => "a source/target language pair",
                    }
                )));
            }
            for &nl in &self.natural_languages {
                if !task.supports(nl) {
                    log::warn!("task {name:?} has no {nl} variant; skipped");
                    continue;
                }
                cells.extend(langs.iter().map(|l| TaskCell {
                    task: task.name.clone(),
                    natural_language: nl,
                    programming_languages: l.clone(),
                }));
            }
        }
        if cells.is_empty() {
            return Err(SynthError::Config("no task supports the selected natural languages".into()));
        }
        Ok(cells)
    }
}

fn call<G: Gateway + ?Sized>(
    gateway: &G,
    opts: &GenerationOptions,
    prompt: PromptText,
    step: &str,
    trace: &mut Vec<TraceEntry>,
) -> Result<String, SynthError> {
    let template = prompt.template_id;
    let prompt_hash = prompt.hash();
    let completion = gateway
        .complete(&opts.request(prompt))
        .map_err(|source| SynthError::Gateway {
            step: step.to_string(),
            source,
        })?;
    let text = completion.text.trim().to_string();
    trace.push(TraceEntry {
        step: step.to_string(),
        template,
        prompt_hash,
        response: text.clone(),
    });
    if text.is_empty() {
        return Err(SynthError::EmptyOutput {
            step: step.to_string(),
        });
    }
    Ok(text)
}

fn labeled(task: &TaskSpec, labels: &[String], parts: &[&str]) -> Result<String, SynthError> {
    if labels.len() != parts.len() {
        return Err(SynthError::Precondition(format!(
            "task {:?}: {} input labels for {} input parts",
            task.name,
            labels.len(),
            parts.len()
        )));
    }
    Ok(labels
        .iter()
        .zip(parts)
        .map(|(l, p)| format!("{l}:\n{p}"))
        .collect::<Vec<_>>()
        .join("\n\n"))
}

/// Run the task's generation chain on `doc` and orient the artifacts into
/// an unlabeled query/positive pair. Tasks with a companion first generate
/// the second code snippet with the companion task's single step.
pub fn generate_pair<G: Gateway + ?Sized>(
    registry: &Registry,
    task: &TaskSpec,
    doc: &CodeDocument,
    cell: &TaskCell,
    gateway: &G,
    opts: &GenerationOptions,
) -> Result<QueryPositivePair, SynthError> {
    if cell.task != task.name {
        return Err(SynthError::Precondition(format!(
            "cell belongs to {:?}, not {:?}",
            cell.task, task.name
        )));
    }
    if doc.programming_language != cell.source_language() {
        return Err(SynthError::Precondition(format!(
            "document {} is {}, cell expects {}",
            doc.id,
            doc.programming_language,
            cell.source_language()
        )));
    }
    let bindings = cell.bindings();
    let mut trace = Vec::new();

    let companion = match &task.companion_task {
        Some(name) => {
            let ct = registry.get_task(name)?;
            let step = ct.generation_steps.first().ok_or_else(|| {
                SynthError::Precondition(format!("companion task {name:?} has no generation step"))
            })?;
            let prompt = render_generation_prompt(ct, 0, &step.input_type, &doc.content, &bindings)?;
            Some(call(gateway, opts, prompt, "companion", &mut trace)?)
        }
        None => None,
    };
    let mut original: Vec<&str> = vec![&doc.content];
    original.extend(companion.as_deref());

    let mut outputs: Vec<String> = Vec::new();
    for (i, step) in task.generation_steps.iter().enumerate() {
        let input = match step.input_role {
            InputRole::OriginalCode if original.len() == 1 => doc.content.clone(),
            InputRole::OriginalCode => labeled(task, &step.input_labels, &original)?,
            InputRole::PreviousStepOutput => outputs
                .last()
                .cloned()
                .ok_or_else(|| SynthError::Precondition("first step has no previous output".into()))?,
            InputRole::OriginalPlusPrevious => {
                let prev = outputs
                    .last()
                    .ok_or_else(|| SynthError::Precondition("first step has no previous output".into()))?;
                let mut parts = original.clone();
                parts.push(prev);
                labeled(task, &step.input_labels, &parts)?
            }
        };
        let prompt = render_generation_prompt(task, i, &step.input_type, &input, &bindings)?;
        let out = call(gateway, opts, prompt, &format!("generation_{}", i + 1), &mut trace)?;
        outputs.push(out);
    }

    let part = |p: PairPart| -> Result<&str, SynthError> {
        let missing = || SynthError::Precondition(format!("task {:?} has no {p:?} artifact", task.name));
        match p {
            PairPart::Original => Ok(&doc.content),
            PairPart::Companion => companion.as_deref().ok_or_else(missing),
            PairPart::Step1 => outputs.first().map(String::as_str).ok_or_else(missing),
            PairPart::Step2 => outputs.get(1).map(String::as_str).ok_or_else(missing),
        }
    };
    let query = task
        .query_parts
        .iter()
        .map(|&p| part(p))
        .collect::<Result<Vec<_>, _>>()?
        .join("\n\n");
    let positive = part(task.positive_part)?.to_string();
    let positive_id = match task.positive_part {
        PairPart::Original => doc.id.clone(),
        _ if task.doc_is_code() => document_id(cell.target_language(), &positive),
        _ => document_id(cell.natural_language.as_str(), &positive),
    };

    Ok(QueryPositivePair {
        pair_id: cell.item_key(&doc.id),
        task_name: task.name.clone(),
        natural_language: cell.natural_language,
        programming_languages: cell.programming_languages.clone(),
        task_instruction: task.instruction(&bindings)?,
        query,
        positive,
        positive_id,
        source_doc_id: doc.id.clone(),
        label: None,
        trace,
    })
}

/// Ask the model whether the positive answers the query and record the label.
pub fn annotate_pair<G: Gateway + ?Sized>(
    task: &TaskSpec,
    mut pair: QueryPositivePair,
    gateway: &G,
    opts: &GenerationOptions,
) -> Result<QueryPositivePair, SynthError> {
    if pair.label.is_some() {
        return Err(SynthError::Precondition(format!("pair {} is already labeled", pair.pair_id)));
    }
    let bindings = pair.bindings(task.programming_language_slots).ok_or_else(|| {
        SynthError::Precondition(format!(
            "language cell {:?} does not fit task {:?}",
            pair.programming_languages, task.name
        ))
    })?;
    let prompt = render_annotation_prompt(task, &bindings, &pair.query, &pair.positive)?;
    let opts = opts.judging();
    let attempts = if opts.retry_malformed { 2 } else { 1 };
    let mut label = AnnotationLabel::Malformed;
    for attempt in 0..attempts {
        let step = if attempt == 0 { "annotation" } else { "annotation_retry" };
        label = match call(gateway, &opts, prompt.clone(), step, &mut pair.trace) {
            Ok(text) => parse_annotation(&text),
            Err(SynthError::EmptyOutput { .. }) => AnnotationLabel::Malformed,
            Err(e) => return Err(e),
        };
        if label != AnnotationLabel::Malformed {
            break;
        }
    }
    pair.label = Some(label);
    Ok(pair)
}

/// Attach mined hard negatives to an accepted pair.
pub fn assemble_sample<E: Embedder + ?Sized>(
    pair: QueryPositivePair,
    pool: &NegativePool,
    embedder: &E,
    cfg: &MiningConfig,
) -> Result<TrainingSample, SynthError> {
    if pair.label != Some(AnnotationLabel::Accept) {
        return Err(SynthError::Precondition(format!("pair {} is not accepted", pair.pair_id)));
    }
    let exclude = [pair.source_doc_id.as_str()];
    let mined = mine_hard_negatives(
        &MiningRequest {
            query: &pair.query,
            positive: &pair.positive,
            positive_id: &pair.positive_id,
            exclude_ids: &exclude,
        },
        pool,
        embedder,
        cfg,
    )?;
    let sample = TrainingSample {
        pair,
        negatives: mined.negatives,
        difficulty: None,
        mining: mined.metadata,
    };
    sample.validate().map_err(SynthError::Precondition)?;
    Ok(sample)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStats {
    /// Pairs that reached annotation.
    pub generated: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub malformed: usize,
    /// Samples written after mining.
    pub persisted: usize,
    /// Items lost to gateway, prompt or mining errors.
    pub failed: usize,
}

impl TaskStats {
    pub fn merge(&mut self, other: &TaskStats) {
        self.generated += other.generated;
        self.accepted += other.accepted;
        self.rejected += other.rejected;
        self.malformed += other.malformed;
        self.persisted += other.persisted;
        self.failed += other.failed;
    }

    pub fn is_consistent(&self) -> bool {
        self.generated == self.accepted + self.rejected + self.malformed
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisStats {
    pub totals: TaskStats,
    pub per_task: BTreeMap<String, TaskStats>,
}

impl SynthesisStats {
    pub fn record(&mut self, task: &str, delta: &TaskStats) {
        self.totals.merge(delta);
        self.per_task.entry(task.to_string()).or_default().merge(delta);
    }

    pub fn merge(&mut self, other: &SynthesisStats) {
        for (task, s) in &other.per_task {
            self.record(task, s);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    /// Cell label, or the pair id for mining failures.
    pub item: String,
    pub doc_id: String,
    pub error: String,
}

/// Where a run keeps its state. Accepted pairs are appended to `pairs` as
/// they are labeled; `samples` is rewritten from the full pairs file at the
/// end of every run.
#[derive(Debug, Clone, Copy)]
pub struct SynthesisPaths<'a> {
    pub pairs: &'a Path,
    pub samples: &'a Path,
    pub checkpoint: Option<&'a Path>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub stats: SynthesisStats,
    pub failures: Vec<ItemFailure>,
    /// Cells whose corpus held fewer documents than the attempt cap.
    pub shortages: Vec<String>,
    /// Items skipped because an earlier run already labeled them.
    pub resumed: usize,
}

/// Which negatives a pair competes against. Every pool starts from the
/// corpus documents of the cell's target language; code positives are added
/// to a pool shared per language, text positives to a pool per task and
/// natural language.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PoolKey {
    Code(String),
    Text {
        task: String,
        natural_language: NaturalLanguage,
        language: String,
    },
}

impl PoolKey {
    pub fn of(task: &TaskSpec, pair: &QueryPositivePair) -> Self {
        let language = pair.programming_languages.last().cloned().unwrap_or_default();
        if task.doc_is_code() {
            PoolKey::Code(language)
        } else {
            PoolKey::Text {
                task: task.name.clone(),
                natural_language: pair.natural_language,
                language,
            }
        }
    }

    pub fn language(&self) -> &str {
        match self {
            PoolKey::Code(l) | PoolKey::Text { language: l, .. } => l,
        }
    }
}

/// Build every pool the accepted `pairs` need.
pub fn build_pools<E: Embedder + ?Sized>(
    registry: &Registry,
    corpus: &Corpus,
    pairs: &[QueryPositivePair],
    embedder: &E,
) -> Result<BTreeMap<PoolKey, NegativePool>, SynthError> {
    let mut members: BTreeMap<PoolKey, Vec<Negative>> = BTreeMap::new();
    for p in pairs {
        let task = registry.get_task(&p.task_name)?;
        let key = PoolKey::of(task, p);
        let docs = members.entry(key.clone()).or_insert_with(|| {
            corpus
                .of_language(key.language())
                .map(|d| Negative {
                    id: d.id.clone(),
                    text: d.content.clone(),
                })
                .collect()
        });
        docs.push(Negative {
            id: p.positive_id.clone(),
            text: p.positive.clone(),
        });
    }
    members
        .into_iter()
        .map(|(k, docs)| Ok((k, NegativePool::build(docs, embedder)?)))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiningRun {
    pub samples: Vec<TrainingSample>,
    /// `(pair_id, error)` for pairs that could not be assembled.
    pub failures: Vec<(String, String)>,
}

/// Assemble samples for accepted `pairs`, keeping input order.
pub fn mine_pairs<E: Embedder + ?Sized>(
    registry: &Registry,
    corpus: &Corpus,
    pairs: &[QueryPositivePair],
    embedder: &E,
    cfg: &MiningConfig,
    jobs: usize,
) -> Result<MiningRun, SynthError> {
    cfg.validate()?;
    let pools = build_pools(registry, corpus, pairs, embedder)?;
    let results = par_map(pairs, jobs, |p| {
        let task = registry.get_task(&p.task_name)?;
        assemble_sample(p.clone(), &pools[&PoolKey::of(task, p)], embedder, cfg)
    });
    let mut run = MiningRun::default();
    for (p, r) in pairs.iter().zip(results) {
        match r {
            Ok(s) => run.samples.push(s),
            Err(e) => {
                log::warn!("pair {}: {e}", p.pair_id);
                run.failures.push((p.pair_id.clone(), e.to_string()));
            }
        }
    }
    Ok(run)
}

enum Outcome {
    Accepted(Box<QueryPositivePair>),
    Labeled(AnnotationLabel),
    /// Failed before a label was obtained; retried on resume.
    Failed(SynthError),
}

fn label_document<G: Gateway + ?Sized>(
    registry: &Registry,
    task: &TaskSpec,
    cell: &TaskCell,
    doc: &CodeDocument,
    gateway: &G,
    opts: &GenerationOptions,
) -> Outcome {
    let labeled = generate_pair(registry, task, doc, cell, gateway, opts)
        .and_then(|p| annotate_pair(task, p, gateway, opts));
    match labeled {
        Ok(p) if p.label == Some(AnnotationLabel::Accept) => Outcome::Accepted(Box::new(p)),
        Ok(p) => Outcome::Labeled(p.label.unwrap_or(AnnotationLabel::Malformed)),
        Err(e) => Outcome::Failed(e),
    }
}

/// The documents a run labels for `cell`, in processing order.
pub fn draw_documents(corpus: &Corpus, cell: &TaskCell, config: &SynthesisConfig) -> Result<DocumentSample, CorpusError> {
    let attempts = config
        .max_attempts_per_cell
        .unwrap_or(config.samples_per_cell * ATTEMPT_FACTOR);
    let seed = seed_from(&[&config.seed.to_string(), &cell.label()]);
    sample_documents(corpus, attempts, cell.source_language(), seed)
}

fn read_checkpoint(path: &Path) -> Result<HashSet<String>, SynthError> {
    if !path.exists() {
        return Ok(HashSet::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| JsonlError::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn read_pairs(path: &Path) -> Result<Vec<QueryPositivePair>, SynthError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(jsonl::read_jsonl_with(path, |p: &QueryPositivePair| {
        if p.label == Some(AnnotationLabel::Accept) {
            Ok(())
        } else {
            Err(format!("pair {} is not accepted", p.pair_id))
        }
    })?)
}

/// Label documents for every cell until each holds `samples_per_cell`
/// accepted pairs (or the attempt cap is spent), then mine negatives for
/// all accepted pairs and rewrite the samples file.
///
/// Items already in the pairs or checkpoint file are skipped, so rerunning
/// after an interruption yields the output of an uninterrupted run.
pub fn run_synthesis<G: Gateway + ?Sized, E: Embedder + ?Sized>(
    registry: &Registry,
    corpus: &Corpus,
    gateway: &G,
    embedder: &E,
    config: &SynthesisConfig,
    paths: SynthesisPaths<'_>,
) -> Result<SynthesisReport, SynthError> {
    let cells = config.cells(registry)?;

    let mut done = match paths.checkpoint {
        Some(p) => read_checkpoint(p)?,
        None => HashSet::new(),
    };
    let mut have: HashMap<TaskCell, usize> = HashMap::new();
    for p in read_pairs(paths.pairs)? {
        done.insert(p.pair_id.clone());
        *have.entry(TaskCell::of_pair(&p)).or_default() += 1;
    }

    let mut pair_writer = JsonlWriter::create(paths.pairs, true)?;
    let mut checkpoint = paths.checkpoint.map(|p| JsonlWriter::create(p, true)).transpose()?;
    let quota = config.samples_per_cell;
    let mut report = SynthesisReport::default();

    for cell in &cells {
        let task = registry.get_task(&cell.task)?;
        let mut count = have.get(cell).copied().unwrap_or(0);
        if count >= quota {
            continue;
        }
        let drawn = match draw_documents(corpus, cell, config) {
            Ok(d) => d,
            Err(CorpusError::NoMatch(lang)) => {
                log::warn!("{}: corpus has no {lang} documents", cell.label());
                report.shortages.push(cell.label());
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if drawn.shortage {
            report.shortages.push(cell.label());
        }
        let pending: Vec<&CodeDocument> = drawn
            .documents
            .iter()
            .filter(|d| !done.contains(&cell.item_key(&d.id)))
            .collect();
        report.resumed += drawn.documents.len() - pending.len();

        'chunks: for chunk in pending.chunks(config.jobs.max(1)) {
            let outcomes = par_map(chunk, config.jobs, |d| {
                label_document(registry, task, cell, d, gateway, &config.generation)
            });
            for (doc, outcome) in chunk.iter().zip(outcomes) {
                if count >= quota {
                    break 'chunks;
                }
                let mut delta = TaskStats::default();
                match outcome {
                    Outcome::Accepted(p) => {
                        pair_writer.write(&*p)?;
                        count += 1;
                        delta.generated = 1;
                        delta.accepted = 1;
                    }
                    Outcome::Labeled(l) => {
                        delta.generated = 1;
                        match l {
                            AnnotationLabel::Reject => delta.rejected = 1,
                            _ => delta.malformed = 1,
                        }
                    }
                    Outcome::Failed(e) => {
                        log::warn!("{} / {}: {e}", cell.label(), doc.id);
                        report.failures.push(ItemFailure {
                            item: cell.label(),
                            doc_id: doc.id.clone(),
                            error: e.to_string(),
                        });
                        delta.failed = 1;
                    }
                }
                if delta.generated == 1 {
                    let key = cell.item_key(&doc.id);
                    if let Some(c) = checkpoint.as_mut() {
                        c.write_line(&key)?;
                    }
                    done.insert(key);
                }
                report.stats.record(&cell.task, &delta);
            }
        }
    }
    drop(pair_writer);

    let pairs = read_pairs(paths.pairs)?;
    let mined = mine_pairs(registry, corpus, &pairs, embedder, &config.mining, config.jobs)?;
    for s in &mined.samples {
        report.stats.record(&s.pair.task_name, &TaskStats {
            persisted: 1,
            ..TaskStats::default()
        });
    }
    let by_id: HashMap<&str, &QueryPositivePair> = pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    for (pair_id, error) in mined.failures {
        let p = by_id[pair_id.as_str()];
        report.stats.record(&p.task_name, &TaskStats {
            failed: 1,
            ..TaskStats::default()
        });
        report.failures.push(ItemFailure {
            item: pair_id.clone(),
            doc_id: p.source_doc_id.clone(),
            error,
        });
    }
    write_samples(paths.samples, &mined.samples, false)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewCandidate {
    pub model: String,
    pub major_type: MajorTaskType,
    pub task_name: String,
    pub task_instruction: String,
    /// Name already in the registry or proposed earlier in this review.
    pub duplicate: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrainstormReport {
    pub candidates: Vec<ReviewCandidate>,
    /// `(model, error)` for models whose output could not be used.
    pub failures: Vec<(String, String)>,
}

fn name_key(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Ask each model for new task ideas of `major_type`. Candidates are only
/// collected for human review; the registry is never modified.
pub fn brainstorm_tasks<G: Gateway + ?Sized>(
    registry: &Registry,
    major_type: MajorTaskType,
    seeds: &[(String, String)],
    gateway: &G,
    models: &[String],
    opts: &GenerationOptions,
) -> Result<BrainstormReport, SynthError> {
    if models.is_empty() {
        return Err(SynthError::Config("no brainstorm model given".into()));
    }
    let prompt = render_brainstorm_prompt(major_type, seeds)?;
    let mut seen: HashSet<String> = registry.tasks().iter().map(|t| name_key(&t.name)).collect();
    let mut report = BrainstormReport::default();
    for model in models {
        let opts = GenerationOptions {
            model: model.clone(),
            ..opts.clone()
        };
        let parsed = gateway
            .complete(&opts.request(prompt.clone()))
            .map_err(|e| e.to_string())
            .and_then(|c| parse_brainstorm(&c.text).map_err(|e| e.to_string()));
        match parsed {
            Ok(found) => report.candidates.extend(found.into_iter().map(|c| ReviewCandidate {
                model: model.clone(),
                major_type,
                duplicate: !seen.insert(name_key(&c.task_name)),
                task_name: c.task_name,
                task_instruction: c.task_instruction,
            })),
            Err(e) => {
                log::warn!("brainstorm with {model}: {e}");
                report.failures.push((model.clone(), e));
            }
        }
    }
    Ok(report)
}

pub fn write_review(path: impl AsRef<Path>, candidates: &[ReviewCandidate]) -> Result<(), SynthError> {
    Ok(jsonl::write_jsonl(path, candidates, false)?)
}
