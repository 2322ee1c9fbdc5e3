use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Outcome of a pair annotation call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationLabel {
    Accept,
    Reject,
    /// Unparseable response; never enters a dataset.
    Malformed,
}

impl AnnotationLabel {
    pub fn is_accept(self) -> bool {
        self == AnnotationLabel::Accept
    }

    /// 0/1 relevance label; malformed responses count as 0.
    pub fn relevance(self) -> u8 {
        u8::from(self.is_accept())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    ErrorData,
    Simple,
    Medium,
    Hard,
    Malformed,
}

impl Difficulty {
    pub fn is_retained(self) -> bool {
        matches!(self, Difficulty::Medium | Difficulty::Hard)
    }
}

/// Exactly "1" accepts; "0" and "2" reject; anything else is malformed.
pub fn parse_annotation(response: &str) -> AnnotationLabel {
    match response.trim() {
        "1" => AnnotationLabel::Accept,
        "0" | "2" => AnnotationLabel::Reject,
        other => {
            log::warn!("malformed annotation response: {:?}", truncate(other, 80));
            AnnotationLabel::Malformed
        }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn starts_with_word(haystack: &str, word: &str) -> bool {
    haystack.len() >= word.len()
        && haystack.is_char_boundary(word.len())
        && haystack[..word.len()].eq_ignore_ascii_case(word)
        && !haystack[word.len()..]
            .chars()
            .next()
            .is_some_and(|c| c.is_alphanumeric())
}

/// Case-insensitive prefix match on the first non-empty line, ignoring
/// leading quotes or markdown emphasis.
pub fn parse_difficulty(response: &str) -> Difficulty {
    let first = response
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    let line = first.trim_start_matches(['"', '\'', '*', '`', '-', ' ']);
    const OPTIONS: [(&str, Difficulty); 4] = [
        ("yes, simple", Difficulty::Simple),
        ("yes, medium", Difficulty::Medium),
        ("yes, hard", Difficulty::Hard),
        ("no", Difficulty::ErrorData),
    ];
    OPTIONS
        .iter()
        .find(|(prefix, _)| starts_with_word(line, prefix))
        .map(|(_, d)| *d)
        .unwrap_or(Difficulty::Malformed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrainstormCandidate {
    pub task_name: String,
    pub task_instruction: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BrainstormParseError {
    #[error("brainstorm output must start with \"[\" and end with \"]\"")]
    NotAnArray,
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("element {index}: {message}")]
    BadElement { index: usize, message: String },
    #[error("empty brainstorm")]
    Empty,
}

pub fn parse_brainstorm(response: &str) -> Result<Vec<BrainstormCandidate>, BrainstormParseError> {
    let trimmed = response.trim();
    if !(trimmed.starts_with('[') && trimmed.ends_with(']')) {
        return Err(BrainstormParseError::NotAnArray);
    }
    let values: Vec<serde_json::Value> =
        serde_json::from_str(trimmed).map_err(|e| BrainstormParseError::Json(e.to_string()))?;
    if values.is_empty() {
        return Err(BrainstormParseError::Empty);
    }
    values
        .into_iter()
        .enumerate()
        .map(|(index, v)| {
            let field = |name: &str| {
                v.get(name)
                    .and_then(|f| f.as_str())
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| BrainstormParseError::BadElement {
                        index,
                        message: format!("missing string field \"{name}\""),
                    })
            };
            Ok(BrainstormCandidate {
                task_name: field("task_name")?,
                task_instruction: field("task_instruction")?,
            })
        })
        .collect()
}
