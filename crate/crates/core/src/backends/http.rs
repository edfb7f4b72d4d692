//! Client for OpenAI-compatible `/chat/completions` endpoints.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tracing::{debug, warn};

use super::cache::ResponseCache;
use super::{Backend, PromptRendering};
use crate::domain::{BackendFailure, FailureKind, HttpEndpointConfig, Question};

/// Exponential backoff: `base * factor^attempt`, stretched by up to `jitter`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
    pub factor: f64,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based), without jitter.
    pub fn nominal_delay(&self, attempt: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(attempt as i32))
    }

    fn delay(&self, attempt: u32) -> Duration {
        let stretch = 1.0 + rand::rng().random_range(0.0..=self.jitter.max(0.0));
        self.nominal_delay(attempt).mul_f64(stretch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl ChatRequest {
    pub fn new(model: &str, rendering: &PromptRendering, temperature: Option<f64>) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: rendering.system_text.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: rendering.user_text.clone(),
                },
            ],
            temperature,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn parse_completion(body: &str) -> Result<String, BackendFailure> {
    let parsed: ChatResponse = serde_json::from_str(body)
        .map_err(|e| BackendFailure::new(FailureKind::Protocol, format!("malformed body: {e}")))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendFailure::new(FailureKind::Protocol, "response has no choices[0].message.content"))
}

enum Attempt {
    Done(String),
    Retry(BackendFailure),
    Fatal(BackendFailure),
}

pub struct HttpBackend {
    validator: String,
    config: HttpEndpointConfig,
    retry: RetryPolicy,
    client: reqwest::Client,
    in_flight: Arc<Semaphore>,
    cache: Option<ResponseCache>,
}

impl HttpBackend {
    pub fn new(validator: &str, config: HttpEndpointConfig) -> Result<Self, BackendFailure> {
        let client = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs_f64(config.connect_timeout_secs))
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| BackendFailure::new(FailureKind::Config, e.to_string()))?;
        let retry = RetryPolicy {
            retries: config.retries,
            ..RetryPolicy::default()
        };
        Ok(Self {
            validator: validator.to_string(),
            in_flight: Arc::new(Semaphore::new(config.max_in_flight.max(1))),
            config,
            retry,
            client,
            cache: None,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    async fn attempt(&self, token: &str, body: &ChatRequest) -> Attempt {
        let _permit = self.in_flight.acquire().await.expect("semaphore never closed");
        let sent = self
            .client
            .post(self.endpoint())
            .bearer_auth(token)
            .json(body)
            .send()
            .await;
        let resp = match sent {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Attempt::Retry(BackendFailure::new(FailureKind::Timeout, e.to_string()))
            }
            Err(e) => {
                return Attempt::Retry(BackendFailure::new(FailureKind::Transport, e.to_string()))
            }
        };
        let status = resp.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Attempt::Fatal(BackendFailure::new(FailureKind::Auth, format!("HTTP {status}")));
        }
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Attempt::Retry(BackendFailure::new(
                FailureKind::HttpStatus,
                format!("HTTP {status}"),
            ));
        }
        if !status.is_success() {
            return Attempt::Fatal(BackendFailure::new(
                FailureKind::HttpStatus,
                format!("HTTP {status}"),
            ));
        }
        match resp.text().await {
            Ok(text) => match parse_completion(&text) {
                Ok(content) => Attempt::Done(content),
                Err(e) => Attempt::Fatal(e),
            },
            Err(e) if e.is_timeout() => {
                Attempt::Retry(BackendFailure::new(FailureKind::Timeout, e.to_string()))
            }
            Err(e) => Attempt::Retry(BackendFailure::new(FailureKind::Transport, e.to_string())),
        }
    }

    /// Sends one chat-completion request with retries on transport errors,
    /// 429 and 5xx. Auth failures and other 4xx fail immediately.
    pub async fn query_http(&self, rendering: &PromptRendering) -> Result<String, BackendFailure> {
        let hash = rendering.content_hash();
        if let Some(hit) = self
            .cache
            .as_ref()
            .and_then(|c| c.get(&self.validator, &self.config.model, &hash))
        {
            debug!(validator = %self.validator, "response cache hit");
            return Ok(hit);
        }

        let token = std::env::var(&self.config.auth_env).map_err(|_| {
            BackendFailure::new(
                FailureKind::Auth,
                format!("environment variable {} is not set", self.config.auth_env),
            )
        })?;
        let body = ChatRequest::new(&self.config.model, rendering, self.config.temperature);

        let mut attempt = 0;
        loop {
            match self.attempt(&token, &body).await {
                Attempt::Done(content) => {
                    if let Some(cache) = &self.cache {
                        if let Err(e) = cache.put(&self.validator, &self.config.model, &hash, &content) {
                            warn!(validator = %self.validator, "cache write failed: {e}");
                        }
                    }
                    return Ok(content);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) if attempt >= self.retry.retries => {
                    let detail = format!("{} (after {} retries)", e.detail, attempt);
                    return Err(BackendFailure::new(e.kind, detail));
                }
                Attempt::Retry(e) => {
                    let delay = self.retry.delay(attempt);
                    debug!(validator = %self.validator, %e, ?delay, "retrying");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
            }
        }
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn query(&self, _: &Question, rendering: &PromptRendering) -> Result<String, BackendFailure> {
        self.query_http(rendering).await
    }

    fn is_remote(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_first_choice() {
        let body = r#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"(e)"}}]}"#;
        assert_eq!(parse_completion(body).unwrap(), "(e)");
    }

    #[test]
    fn malformed_bodies_are_protocol_errors() {
        for body in ["not json", r#"{"choices":[]}"#, r#"{"choices":[{"message":{}}]}"#] {
            assert_eq!(parse_completion(body).unwrap_err().kind, FailureKind::Protocol);
        }
    }

    #[test]
    fn request_body_shape() {
        let r = PromptRendering {
            system_text: "sys".into(),
            user_text: "usr".into(),
        };
        let v = serde_json::to_value(ChatRequest::new("m", &r, None)).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"model":"m","messages":[{"role":"system","content":"sys"},{"role":"user","content":"usr"}]})
        );
        let v = serde_json::to_value(ChatRequest::new("m", &r, Some(0.0))).unwrap();
        assert_eq!(v["temperature"], 0.0);
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.nominal_delay(0), Duration::from_secs(1));
        assert_eq!(p.nominal_delay(1), Duration::from_secs(2));
        assert_eq!(p.nominal_delay(2), Duration::from_secs(4));
        for attempt in 0..3 {
            let d = p.delay(attempt);
            assert!(d >= p.nominal_delay(attempt));
            assert!(d <= p.nominal_delay(attempt).mul_f64(1.2));
        }
    }
}
