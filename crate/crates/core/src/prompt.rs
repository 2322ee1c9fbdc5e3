//! Prompt rendering for brainstorming, pair generation, pair annotation and
//! difficulty judgment, plus the instructed-query layout used for embedding.
//!
//! Template bodies live in `templates/` and are compiled in. Whitespace in
//! those files is significant: it is exactly what the model receives.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::prompt_hash;
use crate::registry::{Bindings, MajorTaskType, Registry, TaskSpec};
use crate::template;

const BRAINSTORM: &str = include_str!("../templates/brainstorm.txt");
const BRAINSTORM_EXAMPLE: &str = include_str!("../templates/brainstorm_example.txt");
const GENERATION: &str = include_str!("../templates/generation.txt");
const ANNOTATION: &str = include_str!("../templates/annotation.txt");
const DIFFICULTY: &str = include_str!("../templates/difficulty.txt");

pub const INSTRUCT_MARKER: &str = "<instruct>";
pub const QUERY_MARKER: &str = "<query>";

/// Seed tasks per major type used to prompt brainstorming.
pub const BRAINSTORM_SEEDS: [(MajorTaskType, &[&str]); 4] = [
    (
        MajorTaskType::Text2Code,
        &[
            "Web Query to Code Retrieval",
            "Code Contest Retrieval",
            "Text to SQL Retrieval",
        ],
    ),
    (MajorTaskType::Code2Text, &["Code Summary Retrieval"]),
    (MajorTaskType::Code2Code, &["Code Context Retrieval"]),
    (MajorTaskType::Hybrid, &["Code Modification Retrieval"]),
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("brainstorm prompt needs at least one seed example")]
    EmptySeeds,
    #[error("task \"{task}\" has {steps} generation step(s); step index {index} is out of range")]
    StepOutOfRange {
        task: String,
        index: usize,
        steps: usize,
    },
    #[error("task \"{task}\": missing binding for {{{name}}}")]
    MissingBinding { task: String, name: String },
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Brainstorm,
    Generation,
    Annotation,
    Difficulty,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Brainstorm => "brainstorm",
            TemplateId::Generation => "generation",
            TemplateId::Annotation => "annotation",
            TemplateId::Difficulty => "difficulty",
        }
    }

    /// Raw template body with placeholders.
    pub fn source(self) -> &'static str {
        strip_final_newline(match self {
            TemplateId::Brainstorm => BRAINSTORM,
            TemplateId::Generation => GENERATION,
            TemplateId::Annotation => ANNOTATION,
            TemplateId::Difficulty => DIFFICULTY,
        })
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn strip_final_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub body: String,
    pub template_id: TemplateId,
    /// Short slot values used for rendering. Bulk content (code, query and
    /// document text) is left out.
    pub placeholder_bindings: BTreeMap<String, String>,
}

impl PromptText {
    pub fn hash(&self) -> String {
        prompt_hash(&self.body)
    }
}

struct Slots<'a>(Vec<(&'a str, &'a str)>);

impl<'a> Slots<'a> {
    fn get(&self, name: &str) -> Option<&'a str> {
        self.0.iter().find(|(k, _)| *k == name).map(|(_, v)| *v)
    }
}

const BULK_SLOTS: [&str; 4] = ["query", "document", "Input Content", "Examples"];

fn render(template_id: TemplateId, slots: Slots<'_>, extra: &Bindings) -> PromptText {
    let body = template::fill(template_id.source(), |n| slots.get(n))
        .expect("every template slot is bound by its renderer");
    let mut placeholder_bindings: BTreeMap<String, String> = extra
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    for (k, v) in &slots.0 {
        if !BULK_SLOTS.contains(k) {
            placeholder_bindings.insert(k.to_string(), v.to_string());
        }
    }
    PromptText {
        body,
        template_id,
        placeholder_bindings,
    }
}

fn fill_registry_text(task: &TaskSpec, text: &str, bindings: &Bindings) -> Result<String, PromptError> {
    template::fill(text, |n| bindings.get(n)).map_err(|name| PromptError::MissingBinding {
        task: task.name.clone(),
        name,
    })
}

/// Seed `(name, instruction)` pairs for a major type, taken from the registry.
pub fn default_seeds(registry: &Registry, major_type: MajorTaskType) -> Vec<(String, String)> {
    BRAINSTORM_SEEDS
        .iter()
        .filter(|(t, _)| *t == major_type)
        .flat_map(|(_, names)| names.iter())
        .filter_map(|n| registry.get_task(n).ok())
        .map(|t| (t.name.clone(), t.task_instruction.clone()))
        .collect()
}

pub fn render_brainstorm_prompt(
    major_type: MajorTaskType,
    seed_examples: &[(String, String)],
) -> Result<PromptText, PromptError> {
    if seed_examples.is_empty() {
        return Err(PromptError::EmptySeeds);
    }
    let example_template = strip_final_newline(BRAINSTORM_EXAMPLE);
    let examples = seed_examples
        .iter()
        .enumerate()
        .map(|(i, (name, instruction))| {
            let index = (i + 1).to_string();
            template::fill(example_template, |n| match n {
                "Index" => Some(index.as_str()),
                "Task Name" => Some(name.as_str()),
                "Task Instruction" => Some(instruction.as_str()),
                _ => None,
            })
            .expect("example slots bound")
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    Ok(render(
        TemplateId::Brainstorm,
        Slots(vec![
            ("Major Task Type", major_type.as_str()),
            ("Examples", &examples),
        ]),
        &Bindings::new(),
    ))
}

pub fn render_generation_prompt(
    task: &TaskSpec,
    step_index: usize,
    input_type_label: &str,
    input_content: &str,
    bindings: &Bindings,
) -> Result<PromptText, PromptError> {
    let step = task
        .generation_steps
        .get(step_index)
        .ok_or_else(|| PromptError::StepOutOfRange {
            task: task.name.clone(),
            index: step_index,
            steps: task.generation_steps.len(),
        })?;
    let instruction = fill_registry_text(task, &step.instruction_template, bindings)?;
    let output = fill_registry_text(task, &step.output_content_template, bindings)?;
    Ok(render(
        TemplateId::Generation,
        Slots(vec![
            ("Generation Instruction", &instruction),
            ("Input Type", input_type_label),
            ("Input Content", input_content),
            ("Output Content", &output),
        ]),
        bindings,
    ))
}

pub fn render_annotation_prompt(
    task: &TaskSpec,
    bindings: &Bindings,
    query: &str,
    document: &str,
) -> Result<PromptText, PromptError> {
    if query.is_empty() {
        return Err(PromptError::EmptyInput("query"));
    }
    if document.is_empty() {
        return Err(PromptError::EmptyInput("document"));
    }
    let instruction = fill_registry_text(task, &task.task_instruction, bindings)?;
    Ok(render(
        TemplateId::Annotation,
        Slots(vec![
            ("Annotation Instruction", &task.annotation_instruction),
            ("Major Task Type", task.major_type.as_str()),
            ("Task Instruction", &instruction),
            ("Query Type", &task.query_type_label),
            ("Doc Type", &task.doc_type_label),
            ("query", query),
            ("document", document),
        ]),
        bindings,
    ))
}

pub fn render_difficulty_prompt(
    task: &TaskSpec,
    bindings: &Bindings,
    query: &str,
    document: &str,
) -> Result<PromptText, PromptError> {
    if query.is_empty() {
        return Err(PromptError::EmptyInput("query"));
    }
    if document.is_empty() {
        return Err(PromptError::EmptyInput("document"));
    }
    let instruction = fill_registry_text(task, &task.task_instruction, bindings)?;
    Ok(render(
        TemplateId::Difficulty,
        Slots(vec![
            ("Task Instruction", &instruction),
            ("query", query),
            ("document", document),
        ]),
        bindings,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructedQuery {
    pub task_instruction: String,
    pub query: String,
    pub rendered: String,
}

/// `<instruct> {instruction} <query> {query}` with single spaces around the markers.
pub fn format_instructed_query(task_instruction: &str, query: &str) -> InstructedQuery {
    let rendered = format!("{INSTRUCT_MARKER} {task_instruction} {QUERY_MARKER} {query}");
    InstructedQuery {
        task_instruction: task_instruction.to_string(),
        query: query.to_string(),
        rendered,
    }
}

/// Inverse of [`format_instructed_query`] for queries that do not contain `<query>`.
pub fn split_instructed_query(rendered: &str) -> Option<(String, String)> {
    let rest = rendered.strip_prefix(INSTRUCT_MARKER)?.strip_prefix(' ')?;
    let sep = format!(" {QUERY_MARKER} ");
    let at = rest.rfind(&sep)?;
    Some((rest[..at].to_string(), rest[at + sep.len()..].to_string()))
}
