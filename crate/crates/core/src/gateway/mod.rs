//! Chat-completion access and parsing of the structured model responses.

mod http;
mod mock;
mod parse;
mod throttle;

pub use http::{
    GatewayConfig, HttpGateway, HttpResponse, RetryPolicy, Transport, TransportError, UreqTransport,
    ENV_API_BASE, ENV_API_KEY,
};
pub use mock::{MockGateway, MockRule};
pub use parse::{
    parse_annotation, parse_brainstorm, parse_difficulty, AnnotationLabel, BrainstormCandidate,
    BrainstormParseError, Difficulty,
};
pub use throttle::Throttle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::PromptText;

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: PromptText,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    /// Greedy decoding with the default output budget.
    pub fn new(prompt: PromptText, model_name: impl Into<String>) -> Self {
        Self {
            prompt,
            model_name: model_name.into(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            seed: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(
                "temperature must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub prompt_hash: String,
    pub request_id: u64,
    pub attempts: u32,
    pub usage: Option<Usage>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("request rejected by endpoint (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no mock fixture for {template} prompt {prompt_hash} (model {model})")]
    NoFixture {
        template: String,
        prompt_hash: String,
        model: String,
    },
    #[error("mock failure: {0}")]
    Mock(String),
    #[error("gateway not configured: {0}")]
    Config(String),
}

/// Anything that can answer a completion request. Implementations must be
/// shareable across worker threads.
pub trait Gateway: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError>;
}

impl<G: Gateway + ?Sized> Gateway for &G {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        (**self).complete(request)
    }
}

impl<G: Gateway + ?Sized> Gateway for Box<G> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        (**self).complete(request)
    }
}

impl<G: Gateway + ?Sized> Gateway for std::sync::Arc<G> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        (**self).complete(request)
    }
}

/// Gateway backed by a closure returning the completion text.
pub struct FnGateway<F>(pub F);

impl<F> Gateway for FnGateway<F>
where
    F: Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        request.validate()?;
        let text = (self.0)(request)?;
        Ok(Completion {
            text,
            prompt_hash: request.prompt.hash(),
            request_id: 0,
            attempts: 1,
            usage: None,
        })
    }
}
