//! Single-pass `{Name}` placeholder substitution.
//!
//! Substituted values are never rescanned, so user content containing braces
//! (code, JSON) passes through untouched.

/// Placeholders that may appear inside registry text (instructions, output contents).
pub const REGISTRY_PLACEHOLDERS: [&str; 4] = [
    "code_language",
    "src_code_language",
    "tgt_code_language",
    "language",
];

/// Placeholders used by the prompt templates themselves.
pub const TEMPLATE_PLACEHOLDERS: [&str; 14] = [
    "Major Task Type",
    "Examples",
    "Index",
    "Task Name",
    "Task Instruction",
    "Generation Instruction",
    "Input Type",
    "Input Content",
    "Output Content",
    "Annotation Instruction",
    "Query Type",
    "Doc Type",
    "query",
    "document",
];

pub fn is_known_placeholder(name: &str) -> bool {
    REGISTRY_PLACEHOLDERS.contains(&name) || TEMPLATE_PLACEHOLDERS.contains(&name)
}

fn is_placeholder_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == ' '
}

/// Names of every `{name}` token in `text` (name made of `[A-Za-z0-9_ ]`), in order.
pub fn placeholders_in(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                if !name.is_empty() && name.chars().all(is_placeholder_char) {
                    out.push(name);
                    rest = &after[close + 1..];
                } else {
                    rest = after;
                }
            }
            None => break,
        }
    }
    out
}

/// True if `text` still holds a `{name}` token for a known placeholder.
pub fn has_residual_placeholder(text: &str) -> bool {
    placeholders_in(text).into_iter().any(is_known_placeholder)
}

/// Replace each `{name}` whose name `lookup` resolves. A known placeholder
/// with no binding is an error carrying the name; unknown brace groups are
/// copied verbatim.
pub fn fill<'a, F>(template: &str, lookup: F) -> Result<String, String>
where
    F: Fn(&str) -> Option<&'a str>,
{
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let name = close.map(|c| &after[..c]);
        match name {
            Some(name) if !name.is_empty() && name.chars().all(is_placeholder_char) => {
                if let Some(value) = lookup(name) {
                    out.push_str(value);
                } else if is_known_placeholder(name) {
                    return Err(name.to_string());
                } else {
                    out.push('{');
                    out.push_str(name);
                    out.push('}');
                }
                rest = &after[name.len() + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}
