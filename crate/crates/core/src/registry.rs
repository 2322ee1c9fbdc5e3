//! The 47 code-retrieval task definitions and the supported programming languages.
//!
//! The registry ships as data (`data/tasks.jsonl`, `data/languages.txt`) and is
//! validated on load. A registry directory on disk uses the same two file names.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::template::{self, REGISTRY_PLACEHOLDERS};

const BUNDLED_TASKS: &str = include_str!("../data/tasks.jsonl");
const BUNDLED_LANGUAGES: &str = include_str!("../data/languages.txt");

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const LANGUAGES_FILE: &str = "languages.txt";

/// Tasks per major type in the bundled registry, in `MajorTaskType::ALL` order.
pub const EXPECTED_TYPE_COUNTS: [usize; 4] = [10, 10, 18, 9];
pub const EXPECTED_TASK_TOTAL: usize = 47;
pub const EXPECTED_LANGUAGE_COUNT: usize = 20;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("invalid registry: {}", join_issues(.0))]
    Invalid(Vec<Issue>),
    #[error("unknown task \"{0}\"")]
    UnknownTask(String),
    #[error("task \"{task}\": {message}")]
    Binding { task: String, message: String },
}

fn join_issues(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(|i| i.message.as_str())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MajorTaskType {
    Text2Code,
    Code2Text,
    Code2Code,
    Hybrid,
}

impl MajorTaskType {
    pub const ALL: [MajorTaskType; 4] = [
        MajorTaskType::Text2Code,
        MajorTaskType::Code2Text,
        MajorTaskType::Code2Code,
        MajorTaskType::Hybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MajorTaskType::Text2Code => "Text2Code",
            MajorTaskType::Code2Text => "Code2Text",
            MajorTaskType::Code2Code => "Code2Code",
            MajorTaskType::Hybrid => "Hybrid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for MajorTaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputRole {
    /// The sampled document (plus its companion code when the task has one).
    OriginalCode,
    PreviousStepOutput,
    OriginalPlusPrevious,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    InputIsQuery,
    OutputIsQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NaturalLanguage {
    English,
    Chinese,
}

impl NaturalLanguage {
    pub fn as_str(self) -> &'static str {
        match self {
            NaturalLanguage::English => "English",
            NaturalLanguage::Chinese => "Chinese",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "english" | "en" => Some(NaturalLanguage::English),
            "chinese" | "zh" | "cn" => Some(NaturalLanguage::Chinese),
            _ => None,
        }
    }
}

impl fmt::Display for NaturalLanguage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageSlots {
    Single,
    SourceTarget,
}

/// Which artifact of a generation chain supplies a side of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPart {
    Original,
    Companion,
    Step1,
    Step2,
}

impl PairPart {
    fn step_index(self) -> Option<usize> {
        match self {
            PairPart::Step1 => Some(0),
            PairPart::Step2 => Some(1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStep {
    pub instruction_template: String,
    pub output_content_template: String,
    pub input_role: InputRole,
    /// Rendered into the `{Input Type}` slot of the generation prompt.
    pub input_type: String,
    /// Section labels when the step input has more than one part.
    pub input_labels: Vec<String>,
}

impl GenerationStep {
    pub fn placeholders(&self) -> BTreeSet<String> {
        template::placeholders_in(&self.instruction_template)
            .into_iter()
            .chain(template::placeholders_in(&self.output_content_template))
            .map(str::to_string)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub major_type: MajorTaskType,
    pub task_instruction: String,
    pub generation_steps: Vec<GenerationStep>,
    pub annotation_instruction: String,
    pub query_type_label: String,
    pub doc_type_label: String,
    pub orientation: Orientation,
    pub natural_languages: BTreeSet<NaturalLanguage>,
    pub programming_language_slots: LanguageSlots,
    pub query_parts: Vec<PairPart>,
    pub positive_part: PairPart,
    /// Task whose single generation step produces the second code snippet for
    /// tasks that compare an input code with an output code.
    pub companion_task: Option<String>,
}

impl TaskSpec {
    /// Task instruction with language placeholders resolved.
    pub fn instruction(&self, bindings: &Bindings) -> Result<String, RegistryError> {
        template::fill(&self.task_instruction, |n| bindings.get(n)).map_err(|missing| {
            RegistryError::Binding {
                task: self.name.clone(),
                message: format!("missing binding for {{{missing}}} in task instruction"),
            }
        })
    }

    /// Placeholders referenced by any generation step.
    pub fn required_placeholders(&self) -> BTreeSet<String> {
        self.generation_steps
            .iter()
            .flat_map(|s| s.placeholders())
            .collect()
    }

    pub fn supports(&self, nl: NaturalLanguage) -> bool {
        self.natural_languages.contains(&nl)
    }

    /// Whether positives (and therefore mined negatives) are code.
    pub fn doc_is_code(&self) -> bool {
        self.doc_type_label.contains("code")
    }
}

/// Values for the registry placeholders (`{code_language}`, `{language}`, ...).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bindings(BTreeMap<String, String>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(code_language: &str, language: NaturalLanguage) -> Self {
        Self::new()
            .with("code_language", code_language)
            .with("language", language.as_str())
    }

    pub fn translation(src: &str, tgt: &str, language: NaturalLanguage) -> Self {
        Self::new()
            .with("src_code_language", src)
            .with("tgt_code_language", tgt)
            .with("code_language", src)
            .with("language", language.as_str())
    }

    pub fn with(mut self, key: &str, value: &str) -> Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    TaskCountMismatch,
    DuplicateTaskName,
    LanguageCount,
    DuplicateLanguage,
    NaturalLanguage,
    Placeholder,
    StepCount,
    Orientation,
    PairLayout,
    Companion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub task: Option<String>,
    pub message: String,
}

impl Issue {
    fn new(kind: IssueKind, task: Option<&str>, message: String) -> Self {
        Self {
            kind,
            task: task.map(str::to_string),
            message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskApplicability {
    pub task: String,
    pub major_type: MajorTaskType,
    pub natural_languages: Vec<NaturalLanguage>,
    pub language_slots: LanguageSlots,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub type_counts: BTreeMap<MajorTaskType, usize>,
    pub total_tasks: usize,
    pub programming_languages: usize,
    pub tasks: Vec<TaskApplicability>,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Whether loading enforces the published task and language counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountPolicy {
    #[default]
    Published,
    /// Accept extended registries (appended brainstormed tasks or languages).
    Extensible,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registry {
    tasks: Vec<TaskSpec>,
    programming_languages: Vec<String>,
    by_name: HashMap<String, usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRecord {
    instruction: String,
    input_role: InputRole,
    input_type: String,
    #[serde(default)]
    input_labels: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskRecord {
    task_name: String,
    major_type: MajorTaskType,
    task_instruction: String,
    generation_steps: Vec<StepRecord>,
    output_contents: Vec<String>,
    annotation_instruction: String,
    query_type: String,
    doc_type: String,
    orientation: Orientation,
    natural_languages: Vec<NaturalLanguage>,
    language_slots: LanguageSlots,
    query_parts: Vec<PairPart>,
    positive_part: PairPart,
    #[serde(default)]
    companion_task: Option<String>,
}

impl TaskRecord {
    fn into_spec(self, line: usize) -> Result<TaskSpec, RegistryError> {
        if self.generation_steps.len() != self.output_contents.len() {
            return Err(RegistryError::Parse {
                file: TASKS_FILE.into(),
                line,
                message: format!(
                    "task \"{}\": {} generation steps but {} output contents",
                    self.task_name,
                    self.generation_steps.len(),
                    self.output_contents.len()
                ),
            });
        }
        let generation_steps = self
            .generation_steps
            .into_iter()
            .zip(self.output_contents)
            .map(|(s, out)| GenerationStep {
                instruction_template: s.instruction,
                output_content_template: out,
                input_role: s.input_role,
                input_type: s.input_type,
                input_labels: s.input_labels,
            })
            .collect();
        Ok(TaskSpec {
            name: self.task_name,
            major_type: self.major_type,
            task_instruction: self.task_instruction,
            generation_steps,
            annotation_instruction: self.annotation_instruction,
            query_type_label: self.query_type,
            doc_type_label: self.doc_type,
            orientation: self.orientation,
            natural_languages: self.natural_languages.into_iter().collect(),
            programming_language_slots: self.language_slots,
            query_parts: self.query_parts,
            positive_part: self.positive_part,
            companion_task: self.companion_task,
        })
    }
}

fn parse_tasks(src: &str) -> Result<Vec<TaskSpec>, RegistryError> {
    let mut tasks = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TaskRecord =
            serde_json::from_str(line).map_err(|e| RegistryError::Parse {
                file: TASKS_FILE.into(),
                line: i + 1,
                message: e.to_string(),
            })?;
        tasks.push(record.into_spec(i + 1)?);
    }
    Ok(tasks)
}

fn parse_languages(src: &str) -> Vec<String> {
    src.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

impl Registry {
    /// The registry compiled into the crate.
    pub fn bundled() -> Self {
        Self::from_sources(BUNDLED_TASKS, BUNDLED_LANGUAGES, CountPolicy::Published)
            .expect("bundled registry is valid")
    }

    pub fn from_sources(
        tasks_jsonl: &str,
        languages: &str,
        policy: CountPolicy,
    ) -> Result<Self, RegistryError> {
        let registry = Self::from_parts(parse_tasks(tasks_jsonl)?, parse_languages(languages));
        let report = registry.validate_with(policy);
        if report.is_valid() {
            Ok(registry)
        } else {
            Err(RegistryError::Invalid(report.issues))
        }
    }

    /// Build without validation; `validate` reports what is wrong.
    pub fn from_parts(tasks: Vec<TaskSpec>, programming_languages: Vec<String>) -> Self {
        let mut by_name = HashMap::new();
        for (i, t) in tasks.iter().enumerate() {
            by_name.entry(t.name.clone()).or_insert(i);
        }
        Self {
            tasks,
            programming_languages,
            by_name,
        }
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn programming_languages(&self) -> &[String] {
        &self.programming_languages
    }

    pub fn get_task(&self, name: &str) -> Result<&TaskSpec, RegistryError> {
        self.by_name
            .get(name)
            .map(|&i| &self.tasks[i])
            .ok_or_else(|| RegistryError::UnknownTask(name.to_string()))
    }

    pub fn tasks_of(&self, major_type: MajorTaskType) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.iter().filter(move |t| t.major_type == major_type)
    }

    /// Canonical spelling of a programming language, matched case-insensitively.
    pub fn canonical_language(&self, name: &str) -> Option<&str> {
        let name = name.trim();
        self.programming_languages
            .iter()
            .find(|l| l.eq_ignore_ascii_case(name))
            .map(String::as_str)
    }

    pub fn validate(&self) -> ValidationReport {
        self.validate_with(CountPolicy::Published)
    }

    pub fn validate_with(&self, policy: CountPolicy) -> ValidationReport {
        let mut issues = Vec::new();
        let mut type_counts: BTreeMap<MajorTaskType, usize> =
            MajorTaskType::ALL.iter().map(|&t| (t, 0)).collect();
        for t in &self.tasks {
            *type_counts.entry(t.major_type).or_default() += 1;
        }

        if policy == CountPolicy::Published {
            let counts: Vec<usize> = MajorTaskType::ALL.iter().map(|t| type_counts[t]).collect();
            if self.tasks.len() != EXPECTED_TASK_TOTAL || counts != EXPECTED_TYPE_COUNTS {
                issues.push(Issue::new(
                    IssueKind::TaskCountMismatch,
                    None,
                    format!(
                        "task count mismatch: expected {EXPECTED_TASK_TOTAL} tasks split 10/10/18/9, found {} split {}",
                        self.tasks.len(),
                        counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("/")
                    ),
                ));
            }
            if self.programming_languages.len() != EXPECTED_LANGUAGE_COUNT {
                issues.push(Issue::new(
                    IssueKind::LanguageCount,
                    None,
                    format!(
                        "expected {EXPECTED_LANGUAGE_COUNT} languages, found {}",
                        self.programming_languages.len()
                    ),
                ));
            }
        }

        let mut seen_langs = BTreeSet::new();
        for l in &self.programming_languages {
            if !seen_langs.insert(l.to_ascii_lowercase()) {
                issues.push(Issue::new(
                    IssueKind::DuplicateLanguage,
                    None,
                    format!("duplicate programming language \"{l}\""),
                ));
            }
        }

        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            if !seen.insert(t.name.as_str()) {
                issues.push(Issue::new(
                    IssueKind::DuplicateTaskName,
                    Some(&t.name),
                    format!("duplicate task name \"{}\"", t.name),
                ));
            }
            self.check_task(t, &mut issues);
        }

        let tasks = self
            .tasks
            .iter()
            .map(|t| TaskApplicability {
                task: t.name.clone(),
                major_type: t.major_type,
                natural_languages: t.natural_languages.iter().copied().collect(),
                language_slots: t.programming_language_slots,
                steps: t.generation_steps.len(),
            })
            .collect();

        ValidationReport {
            type_counts,
            total_tasks: self.tasks.len(),
            programming_languages: self.programming_languages.len(),
            tasks,
            issues,
        }
    }

    fn check_task(&self, t: &TaskSpec, issues: &mut Vec<Issue>) {
        let name = Some(t.name.as_str());
        let issue = |kind, msg: String| Issue::new(kind, name, format!("task \"{}\": {msg}", t.name));

        if t.natural_languages.is_empty() {
            issues.push(issue(IssueKind::NaturalLanguage, "no natural languages".into()));
        }
        if t.major_type == MajorTaskType::Code2Code
            && t.natural_languages.iter().any(|&l| l != NaturalLanguage::English)
        {
            issues.push(issue(
                IssueKind::NaturalLanguage,
                "Code2Code tasks are English-only".into(),
            ));
        }

        let steps = t.generation_steps.len();
        if !(1..=2).contains(&steps) {
            issues.push(issue(
                IssueKind::StepCount,
                format!("expected 1 or 2 generation steps, found {steps}"),
            ));
        }
        if let Some(first) = t.generation_steps.first() {
            if first.input_role != InputRole::OriginalCode {
                issues.push(issue(
                    IssueKind::StepCount,
                    "first step must read the original code".into(),
                ));
            }
        }

        let mut texts: Vec<&str> = vec![&t.task_instruction];
        for s in &t.generation_steps {
            texts.push(&s.instruction_template);
            texts.push(&s.output_content_template);
        }
        for text in texts {
            for p in template::placeholders_in(text) {
                if !REGISTRY_PLACEHOLDERS.contains(&p) {
                    issues.push(issue(
                        IssueKind::Placeholder,
                        format!("unknown placeholder {{{p}}}"),
                    ));
                }
            }
        }
        let required = t.required_placeholders();
        let uses_pair = required.contains("src_code_language") || required.contains("tgt_code_language");
        if uses_pair != (t.programming_language_slots == LanguageSlots::SourceTarget) {
            issues.push(issue(
                IssueKind::Placeholder,
                "language slots disagree with the placeholders in use".into(),
            ));
        }

        let parts = t.query_parts.iter().chain(std::iter::once(&t.positive_part));
        for part in parts {
            if let Some(i) = part.step_index() {
                if i >= steps {
                    issues.push(issue(
                        IssueKind::PairLayout,
                        format!("pair references step {} of {steps}", i + 1),
                    ));
                }
            }
            if *part == PairPart::Companion && t.companion_task.is_none() {
                issues.push(issue(
                    IssueKind::PairLayout,
                    "pair references a companion but none is configured".into(),
                ));
            }
        }
        if t.query_parts.is_empty() || t.query_parts.contains(&t.positive_part) {
            issues.push(issue(
                IssueKind::PairLayout,
                "query parts must be non-empty and exclude the positive".into(),
            ));
        }

        match t.orientation {
            Orientation::OutputIsQuery => {
                if t.positive_part != PairPart::Original || t.query_parts.contains(&PairPart::Original) {
                    issues.push(issue(
                        IssueKind::Orientation,
                        "output_is_query requires the original code as positive and a generated query".into(),
                    ));
                }
            }
            Orientation::InputIsQuery => {
                if t.positive_part == PairPart::Original {
                    issues.push(issue(
                        IssueKind::Orientation,
                        "input_is_query requires a generated positive".into(),
                    ));
                }
            }
        }

        if let Some(c) = &t.companion_task {
            match self.by_name.get(c).map(|&i| &self.tasks[i]) {
                Some(ct) if ct.generation_steps.len() == 1 && ct.doc_is_code() => {}
                Some(_) => issues.push(issue(
                    IssueKind::Companion,
                    format!("companion task \"{c}\" must be a single-step code generator"),
                )),
                None => issues.push(issue(
                    IssueKind::Companion,
                    format!("unknown companion task \"{c}\""),
                )),
            }
        }
    }
}

/// Load `tasks.jsonl` and `languages.txt` from `dir`, enforcing the published counts.
pub fn load_registry(dir: impl AsRef<Path>) -> Result<Registry, RegistryError> {
    load_registry_with(dir, CountPolicy::Published)
}

pub fn load_registry_with(
    dir: impl AsRef<Path>,
    policy: CountPolicy,
) -> Result<Registry, RegistryError> {
    let dir = dir.as_ref();
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read_to_string(&path).map_err(|source| RegistryError::Io { path, source })
    };
    Registry::from_sources(&read(TASKS_FILE)?, &read(LANGUAGES_FILE)?, policy)
}

/// Write a registry directory holding the bundled data.
pub fn write_bundled(dir: impl AsRef<Path>) -> std::io::Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(TASKS_FILE), BUNDLED_TASKS)?;
    std::fs::write(dir.join(LANGUAGES_FILE), BUNDLED_LANGUAGES)
}

pub fn bundled_sources() -> (&'static str, &'static str) {
    (BUNDLED_TASKS, BUNDLED_LANGUAGES)
}
