use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde_json::{json, Value};

use super::throttle::{estimate_tokens, Throttle};
use super::{Completion, CompletionRequest, Gateway, GatewayError, Usage};

pub const ENV_API_BASE: &str = "CODER_FORGE_API_BASE";
pub const ENV_API_KEY: &str = "CODER_FORGE_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Connection-level failure; always retryable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError(pub String);

/// Minimal POST-JSON boundary so retry behavior can be exercised without a network.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &Value,
    ) -> Result<HttpResponse, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(300))
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &Value,
    ) -> Result<HttpResponse, TransportError> {
        let mut req = self.agent.post(url);
        if let Some(key) = api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayConfig {
    pub api_base: String,
    pub api_key: Option<String>,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub tokens_per_minute: Option<u64>,
}

impl GatewayConfig {
    pub fn new(api_base: impl Into<String>) -> Self {
        Self {
            api_base: api_base.into(),
            api_key: None,
            retry: RetryPolicy::default(),
            max_in_flight: 8,
            tokens_per_minute: None,
        }
    }

    /// Read the endpoint from `CODER_FORGE_API_BASE` / `CODER_FORGE_API_KEY`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let base = std::env::var(ENV_API_BASE)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| GatewayError::Config(format!("{ENV_API_BASE} is not set")))?;
        let mut cfg = Self::new(base);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        Ok(cfg)
    }

    pub fn chat_url(&self) -> String {
        format!("{}/chat/completions", self.api_base.trim_end_matches('/'))
    }
}

/// OpenAI-compatible chat-completions client with retry and throttling.
pub struct HttpGateway<T: Transport = UreqTransport> {
    config: GatewayConfig,
    transport: T,
    throttle: Throttle,
    next_id: AtomicU64,
}

impl HttpGateway<UreqTransport> {
    pub fn new(config: GatewayConfig) -> Self {
        Self::with_transport(config, UreqTransport::default())
    }
}

impl<T: Transport> HttpGateway<T> {
    pub fn with_transport(config: GatewayConfig, transport: T) -> Self {
        let throttle = Throttle::new(config.max_in_flight, config.tokens_per_minute);
        Self {
            config,
            transport,
            throttle,
            next_id: AtomicU64::new(1),
        }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    fn request_body(request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": request.model_name,
            "messages": [{"role": "user", "content": request.prompt.body}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn parse_response(body: &str) -> Result<(String, Option<Usage>), GatewayError> {
        let value: Value = serde_json::from_str(body)
            .map_err(|e| GatewayError::Protocol(format!("response is not JSON: {e}")))?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::Protocol("missing choices[0].message.content".into()))?;
        let usage = value
            .get("usage")
            .and_then(|u| serde_json::from_value::<Usage>(u.clone()).ok());
        Ok((text.to_string(), usage))
    }
}

fn is_retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..=599).contains(&status)
}

impl<T: Transport> Gateway for HttpGateway<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        request.validate()?;
        let request_id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let body = Self::request_body(request);
        let url = self.config.chat_url();
        let tokens = estimate_tokens(&request.prompt.body, request.max_output_tokens);
        let attempts_allowed = self.config.retry.max_retries + 1;
        let mut last = String::new();

        for attempt in 1..=attempts_allowed {
            if attempt > 1 {
                std::thread::sleep(self.config.retry.delay(attempt - 2));
            }
            let outcome = {
                let _permit = self.throttle.acquire(tokens);
                self.transport
                    .post_json(&url, self.config.api_key.as_deref(), &body)
            };
            match outcome {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    let (text, usage) = Self::parse_response(&resp.body)?;
                    if let Some(u) = &usage {
                        log::debug!(
                            "request {request_id}: {} prompt + {} completion tokens",
                            u.prompt_tokens,
                            u.completion_tokens
                        );
                    }
                    return Ok(Completion {
                        text,
                        prompt_hash: request.prompt.hash(),
                        request_id,
                        attempts: attempt,
                        usage,
                    });
                }
                Ok(resp) if is_retryable_status(resp.status) => {
                    last = format!("HTTP {}", resp.status);
                    log::warn!("request {request_id} attempt {attempt}: {last}");
                }
                Ok(resp) => {
                    return Err(GatewayError::Rejected {
                        status: resp.status,
                        body: resp.body,
                    })
                }
                Err(TransportError(e)) => {
                    last = e;
                    log::warn!("request {request_id} attempt {attempt}: {last}");
                }
            }
        }
        Err(GatewayError::RetriesExhausted {
            attempts: attempts_allowed,
            last,
        })
    }
}
