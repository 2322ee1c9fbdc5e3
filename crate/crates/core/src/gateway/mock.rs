use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{Completion, CompletionRequest, Gateway, GatewayError};

/// One fixture line. Every present matcher field must match; more specific
/// rules win (see [`MockRule::specificity`]). `response` may contain
/// `{prompt_hash}`, which is replaced by the request's prompt hash.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// When set, the matched request fails with this message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl MockRule {
    pub fn respond(response: impl Into<String>) -> Self {
        Self {
            response: Some(response.into()),
            ..Self::default()
        }
    }

    pub fn for_template(mut self, template: &str) -> Self {
        self.template = Some(template.to_string());
        self
    }

    pub fn for_model(mut self, model: &str) -> Self {
        self.model = Some(model.to_string());
        self
    }

    pub fn for_prompt_hash(mut self, hash: &str) -> Self {
        self.prompt_hash = Some(hash.to_string());
        self
    }

    pub fn when_contains(mut self, needle: &str) -> Self {
        self.contains = Some(needle.to_string());
        self
    }

    fn matches(&self, request: &CompletionRequest, hash: &str) -> bool {
        self.prompt_hash.as_deref().is_none_or(|h| h == hash)
            && self
                .contains
                .as_deref()
                .is_none_or(|c| request.prompt.body.contains(c))
            && self
                .template
                .as_deref()
                .is_none_or(|t| t == request.prompt.template_id.as_str())
            && self.model.as_deref().is_none_or(|m| m == request.model_name)
    }

    /// prompt hash > substring > template > model; ties go to the earlier line.
    fn specificity(&self) -> u8 {
        (u8::from(self.prompt_hash.is_some()) << 3)
            | (u8::from(self.contains.is_some()) << 2)
            | (u8::from(self.template.is_some()) << 1)
            | u8::from(self.model.is_some())
    }
}

/// Stateless fixture-backed gateway. The response depends only on the
/// request, so results do not depend on call order or thread interleaving.
#[derive(Debug, Default)]
pub struct MockGateway {
    rules: Vec<MockRule>,
    calls: AtomicU64,
}

impl MockGateway {
    pub fn from_rules(rules: Vec<MockRule>) -> Self {
        Self {
            rules,
            calls: AtomicU64::new(0),
        }
    }

    /// Load JSON-lines fixtures. Blank lines and lines starting with `#` are skipped.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let rule: MockRule =
                serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            if rule.response.is_none() && rule.error.is_none() {
                return Err(format!("line {}: rule needs \"response\" or \"error\"", i + 1));
            }
            rules.push(rule);
        }
        Ok(Self::from_rules(rules))
    }

    pub fn rules(&self) -> &[MockRule] {
        &self.rules
    }

    /// Number of completions served so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn lookup(&self, request: &CompletionRequest, hash: &str) -> Option<&MockRule> {
        let mut best: Option<&MockRule> = None;
        for rule in self.rules.iter().filter(|r| r.matches(request, hash)) {
            if best.is_none_or(|b| rule.specificity() > b.specificity()) {
                best = Some(rule);
            }
        }
        best
    }
}

impl Gateway for MockGateway {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        request.validate()?;
        let hash = request.prompt.hash();
        let rule = self
            .lookup(request, &hash)
            .ok_or_else(|| GatewayError::NoFixture {
                template: request.prompt.template_id.as_str().to_string(),
                prompt_hash: hash.clone(),
                model: request.model_name.clone(),
            })?;
        let n = self.calls.fetch_add(1, Ordering::Relaxed) + 1;
        if let Some(err) = &rule.error {
            return Err(GatewayError::Mock(err.clone()));
        }
        let text = rule
            .response
            .as_deref()
            .unwrap_or_default()
            .replace("{prompt_hash}", &hash);
        Ok(Completion {
            text,
            prompt_hash: hash,
            request_id: n,
            attempts: 1,
            usage: None,
        })
    }
}
