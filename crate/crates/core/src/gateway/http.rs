//! Chat-completion backend over HTTP.
//!
//! Each call POSTs a request with a single user message and reads the first
//! choice's message content. The bearer token is read from the configured
//! environment variable on every call and never stored.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendFailure, CompletionRequest};

#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    endpoint_url: String,
    auth_token_env: Option<String>,
}

#[derive(Debug, Serialize)]
pub(crate) struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: [ChatMessage<'a>; 1],
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
pub(crate) struct ChatMessage<'a> {
    pub role: &'a str,
    pub content: &'a str,
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
    #[serde(default)]
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint_url: impl Into<String>, auth_token_env: Option<String>) -> Self {
        HttpBackend {
            client: reqwest::Client::new(),
            endpoint_url: endpoint_url.into(),
            auth_token_env,
        }
    }

    pub(crate) fn body<'a>(request: &'a CompletionRequest) -> ChatRequest<'a> {
        ChatRequest {
            model: request.model.as_str(),
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            seed: request.seed,
        }
    }
}

/// Extract the first choice's content from a chat-completion response body.
pub(crate) fn parse_response(body: &str) -> Result<String, BackendFailure> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| BackendFailure::Malformed(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendFailure::Malformed("no choices[0].message.content".into()))
}

#[async_trait]
impl Backend for HttpBackend {
    async fn send(&self, request: &CompletionRequest) -> Result<String, BackendFailure> {
        let mut builder = self.client.post(&self.endpoint_url).json(&Self::body(request));
        if let Some(var) = &self.auth_token_env {
            let token =
                std::env::var(var).map_err(|_| BackendFailure::MissingCredential(var.clone()))?;
            builder = builder.bearer_auth(token);
        }
        let response = builder
            .send()
            .await
            .map_err(|e| BackendFailure::Transport(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .await
            .map_err(|e| BackendFailure::Transport(e.to_string()))?;
        if !status.is_success() {
            let mut body = body;
            if body.len() > 512 {
                let end = (0..=512).rev().find(|&i| body.is_char_boundary(i)).unwrap_or(0);
                body.truncate(end);
            }
            return Err(BackendFailure::Status {
                status: status.as_u16(),
                body,
            });
        }
        parse_response(&body)
    }
}
