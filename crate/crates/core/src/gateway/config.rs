//! Backend config file records.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    BackendConfig, MockSpec, ModelId, RetryPolicy, DEFAULT_MAX_TOKENS, DEFAULT_REQUESTS_PER_SECOND,
};

#[derive(Debug, Clone, PartialEq)]
pub enum BackendKind {
    Http {
        endpoint_url: String,
        /// Name of the environment variable holding the bearer token.
        auth_token_env: Option<String>,
    },
    Mock(MockSpec),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    #[default]
    Http,
    Mock,
}

/// One backend as written in a config file. Credentials are never stored
/// here, only the name of the variable that holds them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendEntry {
    pub model: ModelId,
    #[serde(default)]
    pub kind: EntryKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    /// Defaults to 1000 for HTTP backends and 0 for mocks.
    #[serde(default)]
    pub backoff_base_ms: Option<u64>,
    /// Defaults to 5 for HTTP backends and unlimited for mocks; 0 disables.
    #[serde(default)]
    pub requests_per_second: Option<f64>,
    /// Cap on concurrent calls to this backend from all callers.
    #[serde(default)]
    pub max_concurrent: Option<usize>,
    #[serde(default)]
    pub mock: Option<MockSpec>,
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}
fn default_timeout_s() -> f64 {
    30.0
}
fn default_max_attempts() -> u32 {
    3
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsFile {
    #[serde(default)]
    pub backends: Vec<BackendEntry>,
}

impl BackendEntry {
    pub fn into_config(self) -> Result<BackendConfig, String> {
        let model = self.model;
        let (kind, default_backoff, default_rps) = match self.kind {
            EntryKind::Http => {
                let endpoint_url = self
                    .endpoint_url
                    .filter(|u| !u.trim().is_empty())
                    .ok_or_else(|| format!("{model}: http backend needs endpoint_url"))?;
                if self.mock.is_some() {
                    return Err(format!("{model}: mock section on an http backend"));
                }
                (
                    BackendKind::Http {
                        endpoint_url,
                        auth_token_env: self.auth_token_env,
                    },
                    1000,
                    Some(DEFAULT_REQUESTS_PER_SECOND),
                )
            }
            EntryKind::Mock => (BackendKind::Mock(self.mock.unwrap_or_default()), 0, None),
        };
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(format!("{model}: timeout_s must be positive"));
        }
        let requests_per_second = match self.requests_per_second {
            Some(0.0) => None,
            Some(r) => Some(r),
            None => default_rps,
        };
        Ok(BackendConfig {
            model,
            kind,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            timeout: Duration::from_secs_f64(self.timeout_s),
            retry: RetryPolicy {
                max_attempts: self.max_attempts,
                backoff_base: Duration::from_millis(self.backoff_base_ms.unwrap_or(default_backoff)),
            },
            requests_per_second,
            max_concurrent: self.max_concurrent,
        })
    }
}
