//! Uniform completion interface over heterogeneous LLM backends.
//!
//! A [`Gateway`] owns one registered backend per [`ModelId`] together with
//! its retry policy, timeout and token-bucket rate limiter. All mutable state
//! is internally synchronized, so a gateway can be shared behind an `Arc`.
//! [`Gateway::batch_complete`] is the only place requests fan out; it keeps
//! results in input order and never has more than `max_in_flight` requests
//! outstanding.

mod config;
mod http;
mod limiter;
pub mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::corpus::SdohCode;
use crate::promptkit::{parse_label, ParsedLabel, PromptKit};

pub use config::{BackendEntry, BackendKind, BackendsFile};
pub use http::HttpBackend;
pub use limiter::RateLimiter;
pub use mock::{MockRule, MockSpec, ScriptedBackend};

/// Sampling temperature for classification and verification calls.
pub const CLASSIFY_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 64;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_REQUESTS_PER_SECOND: f64 = 5.0;
const MAX_BACKOFF: Duration = Duration::from_secs(30);

/// Backend identifier, conventionally `provider/name`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelId(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid model id {0:?}: must be non-empty without whitespace")]
pub struct InvalidModelId(pub String);

impl ModelId {
    pub fn new(id: impl Into<String>) -> Result<Self, InvalidModelId> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(InvalidModelId(id));
        }
        Ok(ModelId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ModelId {
    type Error = InvalidModelId;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        ModelId::new(s)
    }
}

impl From<ModelId> for String {
    fn from(m: ModelId) -> String {
        m.0
    }
}

impl FromStr for ModelId {
    type Err = InvalidModelId;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelId::new(s)
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Base of the exponential backoff; the n-th retry sleeps a uniform
    /// random duration in `[0, backoff_base * 2^(n-1)]`.
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        let cap = self
            .backoff_base
            .saturating_mul(1u32 << retry.saturating_sub(1).min(16))
            .min(MAX_BACKOFF);
        if cap.is_zero() {
            return cap;
        }
        cap.mul_f64(rand::rng().random::<f64>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub model: ModelId,
    pub kind: BackendKind,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// Token-bucket rate; `None` disables limiting.
    pub requests_per_second: Option<f64>,
    /// Cap on calls outstanding against this backend across all callers; `None` is unbounded.
    pub max_concurrent: Option<usize>,
}

impl BackendConfig {
    pub fn http(model: ModelId, endpoint_url: impl Into<String>, auth_token_env: Option<String>) -> Self {
        BackendConfig {
            model,
            kind: BackendKind::Http {
                endpoint_url: endpoint_url.into(),
                auth_token_env,
            },
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            timeout: DEFAULT_TIMEOUT,
            retry: RetryPolicy::default(),
            requests_per_second: Some(DEFAULT_REQUESTS_PER_SECOND),
            max_concurrent: None,
        }
    }

    /// A scripted backend with no rate limit and no backoff sleep.
    pub fn mock(model: ModelId) -> Self {
        BackendConfig {
            model,
            kind: BackendKind::Mock(MockSpec::default()),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            timeout: DEFAULT_TIMEOUT,
            retry: RetryPolicy {
                max_attempts: 3,
                backoff_base: Duration::ZERO,
            },
            requests_per_second: None,
            max_concurrent: None,
        }
    }
}

/// Per-call overrides of the backend's configured sampling parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GenerationParams {
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub seed: Option<u64>,
}

impl GenerationParams {
    pub fn deterministic() -> Self {
        GenerationParams {
            temperature: Some(CLASSIFY_TEMPERATURE),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model: ModelId,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionOutcome {
    pub text: String,
    pub model: ModelId,
    pub latency: Duration,
    pub attempts: u32,
}

/// What a single backend call can fail with.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendFailure {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
}

impl BackendFailure {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendFailure::Transport(_) | BackendFailure::Timeout => true,
            BackendFailure::Status { status, .. } => *status == 429 || (500..600).contains(status),
            BackendFailure::Malformed(_) | BackendFailure::MissingCredential(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("{model}: backend unavailable after {attempts} attempt(s): {last}")]
    BackendUnavailable {
        model: String,
        attempts: u32,
        last: BackendFailure,
    },
    #[error("{model}: authentication failed with HTTP {status} after {attempts} attempt(s)")]
    AuthError {
        model: String,
        status: u16,
        attempts: u32,
    },
    #[error("{model}: request rejected after {attempts} attempt(s): {failure}")]
    Rejected {
        model: String,
        attempts: u32,
        failure: BackendFailure,
    },
    #[error("{model}: configuration error: {message}")]
    ConfigError {
        model: String,
        attempts: u32,
        message: String,
    },
}

impl GatewayError {
    pub fn config(model: impl fmt::Display, message: impl Into<String>) -> Self {
        GatewayError::ConfigError {
            model: model.to_string(),
            attempts: 0,
            message: message.into(),
        }
    }

    pub fn attempts(&self) -> u32 {
        match self {
            GatewayError::BackendUnavailable { attempts, .. }
            | GatewayError::AuthError { attempts, .. }
            | GatewayError::Rejected { attempts, .. }
            | GatewayError::ConfigError { attempts, .. } => *attempts,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, GatewayError::ConfigError { .. })
    }
}

/// A completion endpoint. Implementations perform exactly one attempt; the
/// gateway owns retry, timeout and rate limiting.
#[async_trait]
pub trait Backend: Send + Sync + fmt::Debug {
    async fn send(&self, request: &CompletionRequest) -> Result<String, BackendFailure>;
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    attempts: AtomicU64,
    failures: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BackendStats {
    pub requests: u64,
    pub attempts: u64,
    pub failures: u64,
}

#[derive(Debug)]
struct Registered {
    config: BackendConfig,
    backend: Arc<dyn Backend>,
    limiter: Option<RateLimiter>,
    slots: Option<Semaphore>,
    counters: Counters,
}

pub type BatchResult<T> = Result<Vec<Result<T, GatewayError>>, GatewayError>;

#[derive(Debug, Default)]
pub struct Gateway {
    backends: BTreeMap<ModelId, Registered>,
    prompts: PromptKit,
}

impl Gateway {
    pub fn new() -> Self {
        Gateway::default()
    }

    /// Build a gateway from typed configs, constructing HTTP or scripted backends.
    pub fn from_configs(configs: Vec<BackendConfig>) -> Result<Self, GatewayError> {
        let mut gw = Gateway::new();
        for cfg in configs {
            let backend: Arc<dyn Backend> = match &cfg.kind {
                BackendKind::Http {
                    endpoint_url,
                    auth_token_env,
                } => Arc::new(HttpBackend::new(endpoint_url.clone(), auth_token_env.clone())),
                BackendKind::Mock(spec) => Arc::new(
                    ScriptedBackend::from_spec(spec)
                        .map_err(|e| GatewayError::config(&cfg.model, e))?,
                ),
            };
            gw.register(cfg, backend)?;
        }
        Ok(gw)
    }

    pub fn with_prompts(mut self, prompts: PromptKit) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn prompts(&self) -> &PromptKit {
        &self.prompts
    }

    pub fn register(&mut self, config: BackendConfig, backend: Arc<dyn Backend>) -> Result<(), GatewayError> {
        if self.backends.contains_key(&config.model) {
            return Err(GatewayError::config(&config.model, "model registered twice"));
        }
        if config.retry.max_attempts == 0 {
            return Err(GatewayError::config(&config.model, "max_attempts must be at least 1"));
        }
        if config.max_tokens == 0 {
            return Err(GatewayError::config(&config.model, "max_tokens must be positive"));
        }
        if config.temperature.is_nan() || config.temperature < 0.0 {
            return Err(GatewayError::config(&config.model, "temperature must be >= 0"));
        }
        let limiter = match config.requests_per_second {
            Some(rps) if !(rps > 0.0 && rps.is_finite()) => {
                return Err(GatewayError::config(&config.model, "requests_per_second must be positive"))
            }
            Some(rps) => Some(RateLimiter::new(rps)),
            None => None,
        };
        if config.max_concurrent == Some(0) {
            return Err(GatewayError::config(&config.model, "max_concurrent must be at least 1"));
        }
        let slots = config.max_concurrent.map(Semaphore::new);
        self.backends.insert(
            config.model.clone(),
            Registered {
                config,
                backend,
                limiter,
                slots,
                counters: Counters::default(),
            },
        );
        Ok(())
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelId> {
        self.backends.keys()
    }

    pub fn config(&self, model: &ModelId) -> Option<&BackendConfig> {
        self.backends.get(model).map(|r| &r.config)
    }

    pub fn contains(&self, model: &ModelId) -> bool {
        self.backends.contains_key(model)
    }

    pub fn stats(&self, model: &ModelId) -> Option<BackendStats> {
        self.backends.get(model).map(|r| BackendStats {
            requests: r.counters.requests.load(Ordering::Relaxed),
            attempts: r.counters.attempts.load(Ordering::Relaxed),
            failures: r.counters.failures.load(Ordering::Relaxed),
        })
    }

    fn registered(&self, model: &ModelId) -> Result<&Registered, GatewayError> {
        self.backends
            .get(model)
            .ok_or_else(|| GatewayError::config(model, "model is not configured"))
    }

    /// Send one prompt, retrying transport errors, timeouts, 429 and 5xx.
    pub async fn complete(
        &self,
        model: &ModelId,
        prompt: &str,
        overrides: GenerationParams,
    ) -> Result<CompletionOutcome, GatewayError> {
        let reg = self.registered(model)?;
        let cfg = &reg.config;
        let request = CompletionRequest {
            model: model.clone(),
            prompt: prompt.to_string(),
            temperature: overrides.temperature.unwrap_or(cfg.temperature),
            max_tokens: overrides.max_tokens.unwrap_or(cfg.max_tokens),
            seed: overrides.seed,
        };
        reg.counters.requests.fetch_add(1, Ordering::Relaxed);
        let started = Instant::now();
        let max = cfg.retry.max_attempts;
        let mut attempt = 0;
        loop {
            attempt += 1;
            if let Some(limiter) = &reg.limiter {
                limiter.acquire().await;
            }
            let permit = match &reg.slots {
                Some(s) => Some(s.acquire().await.expect("semaphore is never closed")),
                None => None,
            };
            reg.counters.attempts.fetch_add(1, Ordering::Relaxed);
            let result = match tokio::time::timeout(cfg.timeout, reg.backend.send(&request)).await {
                Ok(r) => r,
                Err(_) => Err(BackendFailure::Timeout),
            };
            drop(permit);
            let failure = match result {
                Ok(text) => {
                    return Ok(CompletionOutcome {
                        text,
                        model: model.clone(),
                        latency: started.elapsed(),
                        attempts: attempt,
                    })
                }
                Err(f) => f,
            };
            if let BackendFailure::Status { status: status @ (401 | 403), .. } = failure {
                reg.counters.failures.fetch_add(1, Ordering::Relaxed);
                return Err(GatewayError::AuthError {
                    model: model.to_string(),
                    status,
                    attempts: attempt,
                });
            }
            if let BackendFailure::MissingCredential(var) = &failure {
                reg.counters.failures.fetch_add(1, Ordering::Relaxed);
                return Err(GatewayError::ConfigError {
                    model: model.to_string(),
                    attempts: attempt,
                    message: format!("credential variable {var} is not set"),
                });
            }
            if !failure.is_retryable() {
                reg.counters.failures.fetch_add(1, Ordering::Relaxed);
                return Err(GatewayError::Rejected {
                    model: model.to_string(),
                    attempts: attempt,
                    failure,
                });
            }
            if attempt >= max {
                reg.counters.failures.fetch_add(1, Ordering::Relaxed);
                return Err(GatewayError::BackendUnavailable {
                    model: model.to_string(),
                    attempts: attempt,
                    last: failure,
                });
            }
            tracing::debug!(%model, attempt, %failure, "retrying");
            let delay = cfg.retry.backoff(attempt);
            if !delay.is_zero() {
                tokio::time::sleep(delay).await;
            }
        }
    }

    /// Complete many prompts against one model with at most `max_in_flight`
    /// outstanding requests. Output index `i` corresponds to input index `i`;
    /// per-item failures do not abort the batch.
    pub async fn batch_complete(
        &self,
        model: &ModelId,
        prompts: &[String],
        overrides: GenerationParams,
        max_in_flight: usize,
    ) -> BatchResult<CompletionOutcome> {
        self.registered(model)?;
        if max_in_flight == 0 {
            return Err(GatewayError::config(model, "max_in_flight must be at least 1"));
        }
        Ok(stream::iter(0..prompts.len())
            .map(|i| self.complete(model, &prompts[i], overrides))
            .buffered(max_in_flight)
            .collect()
            .await)
    }

    /// Render the classification prompt, send it at temperature 0 and parse the answer.
    pub async fn classify_sentence(
        &self,
        model: &ModelId,
        code: &SdohCode,
        sentence_text: &str,
    ) -> Result<ParsedLabel, GatewayError> {
        let prompt = self.prompts.render_classification_prompt(code, sentence_text);
        let out = self
            .complete(model, &prompt, GenerationParams::deterministic())
            .await?;
        Ok(parse_label(&out.text))
    }

    pub async fn batch_classify(
        &self,
        model: &ModelId,
        code: &SdohCode,
        sentences: &[String],
        max_in_flight: usize,
    ) -> BatchResult<ParsedLabel> {
        let prompts: Vec<String> = sentences
            .iter()
            .map(|s| self.prompts.render_classification_prompt(code, s))
            .collect();
        let outcomes = self
            .batch_complete(model, &prompts, GenerationParams::deterministic(), max_in_flight)
            .await?;
        Ok(outcomes
            .into_iter()
            .map(|r| r.map(|o| parse_label(&o.text)))
            .collect())
    }
}
