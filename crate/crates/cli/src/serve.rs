//! HTTP service over a trained routing table.
//!
//! Responses carry verdicts and routed model ids only. Prompts, raw model
//! output and backend error details are added when the server runs with
//! `--debug`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use sdoh_core::corpus::{parse_note, SegmentScope};
use sdoh_core::gateway::GatewayError;
use sdoh_core::router::{self, NoteCoding, RouterError};
use sdoh_core::{fingerprint, CodeRegistry, Gateway, RoutingTable, SdohCode, Verdict};

use crate::commands;
use crate::config::Loaded;
use crate::error::CliError;

#[derive(Debug)]
struct Inner {
    gateway: Gateway,
    table: RoutingTable,
    registry: CodeRegistry,
    max_in_flight: usize,
    scope: SegmentScope,
    debug: bool,
}

#[derive(Debug, Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(
        gateway: Gateway,
        table: RoutingTable,
        registry: CodeRegistry,
        max_in_flight: usize,
        scope: SegmentScope,
        debug: bool,
    ) -> Self {
        AppState(Arc::new(Inner { gateway, table, registry, max_in_flight, scope, debug }))
    }
}

pub fn app(state: AppState) -> Router {
    Router::new()
        .route("/v1/classify", post(classify))
        .route("/v1/code-note", post(code_note))
        .route("/v1/routing-table", get(routing_table))
        .route("/healthz", get(healthz))
        .with_state(state)
}

#[derive(Debug)]
enum ApiError {
    BadRequest(String),
    UnknownCode(String),
    Backend(GatewayError),
}

impl ApiError {
    fn respond(self, debug: bool) -> Response {
        let (status, mut body) = match &self {
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, json!({ "error": "bad_request" })),
            ApiError::UnknownCode(c) => (StatusCode::NOT_FOUND, json!({ "error": "unknown_code", "code": c })),
            ApiError::Backend(_) => (StatusCode::BAD_GATEWAY, json!({ "error": "backend_error" })),
        };
        match &self {
            ApiError::BadRequest(m) => body["detail"] = json!(m),
            ApiError::Backend(e) => {
                tracing::warn!("backend error: {e}");
                if debug {
                    body["detail"] = json!(e.to_string());
                }
            }
            ApiError::UnknownCode(_) => {}
        }
        (status, Json(body)).into_response()
    }
}

impl From<RouterError> for ApiError {
    fn from(e: RouterError) -> Self {
        match e {
            RouterError::Gateway(g) => ApiError::Backend(g),
            RouterError::UnknownCode(c) => ApiError::UnknownCode(c),
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}

fn lookup<'a>(s: &'a Inner, input: &str) -> Result<&'a SdohCode, ApiError> {
    let code = s
        .registry
        .resolve(input)
        .ok_or_else(|| ApiError::UnknownCode(input.to_string()))?;
    if s.table.entries().contains_key(&code.code_id) {
        Ok(code)
    } else {
        Err(ApiError::UnknownCode(input.to_string()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyRequest {
    pub code_id: String,
    pub sentence: String,
}

#[derive(Debug, Serialize)]
pub struct ClassifyResponse {
    pub code_id: String,
    pub label: Verdict,
    pub model: String,
    pub latency_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

async fn classify(State(state): State<AppState>, body: Result<Json<ClassifyRequest>, JsonRejection>) -> Response {
    let s = &*state.0;
    let result = async {
        let Json(req) = body.map_err(|e| ApiError::BadRequest(e.body_text()))?;
        let code = lookup(s, &req.code_id)?;
        let decision = s.table.route(&code.code_id)?;
        let started = Instant::now();
        let label = router::classify_routed(&s.gateway, &s.table, code, &req.sentence).await?;
        Ok::<_, ApiError>(ClassifyResponse {
            code_id: code.code_id.clone(),
            label: label.verdict,
            model: decision.model.to_string(),
            latency_ms: started.elapsed().as_millis() as u64,
            prompt: s
                .debug
                .then(|| s.gateway.prompts().render_classification_prompt(code, &req.sentence)),
            raw_response: s.debug.then_some(label.raw_response),
        })
    }
    .await;
    match result {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.respond(s.debug),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeNoteRequest {
    pub text: String,
    #[serde(default)]
    pub note_id: Option<String>,
    /// Codes to look for; every routed code when empty.
    #[serde(default)]
    pub codes: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct EvidenceOutput {
    pub sentence_index: usize,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct FailureOutput {
    pub code_id: String,
    pub sentence_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Per-code evidence for one note, plus the sentences that could not be classified.
#[derive(Debug, Serialize)]
pub struct NoteOutput {
    pub note_id: String,
    pub evidence: BTreeMap<String, Vec<EvidenceOutput>>,
    pub errors: Vec<FailureOutput>,
}

impl NoteOutput {
    pub fn new(note_id: &str, coding: &NoteCoding, debug: bool) -> Self {
        let evidence = coding
            .evidence
            .iter()
            .map(|(code, found)| {
                let items = found
                    .iter()
                    .map(|e| EvidenceOutput {
                        sentence_index: e.sentence.index,
                        text: e.sentence.text.clone(),
                        raw_response: debug.then(|| e.label.raw_response.clone()),
                    })
                    .collect();
                (code.clone(), items)
            })
            .collect();
        let errors = coding
            .errors
            .iter()
            .map(|f| FailureOutput {
                code_id: f.code_id.clone(),
                sentence_index: f.sentence_index,
                message: debug.then(|| f.message.clone()),
            })
            .collect();
        NoteOutput { note_id: note_id.to_string(), evidence, errors }
    }
}

async fn code_note(State(state): State<AppState>, body: Result<Json<CodeNoteRequest>, JsonRejection>) -> Response {
    let s = &*state.0;
    let result = async {
        let Json(req) = body.map_err(|e| ApiError::BadRequest(e.body_text()))?;
        let codes: Vec<SdohCode> = if req.codes.is_empty() {
            s.table.codes().filter_map(|c| s.registry.get(c).cloned()).collect()
        } else {
            req.codes.iter().map(|c| lookup(s, c).cloned()).collect::<Result<_, _>>()?
        };
        let note_id = req.note_id.unwrap_or_else(|| "note".to_string());
        let note = parse_note(note_id.clone(), &req.text);
        let coding = router::code_note(&s.gateway, &s.table, &note, &codes, s.scope, s.max_in_flight).await?;
        for f in &coding.errors {
            tracing::warn!(code = %f.code_id, sentence = f.sentence_index, "{}", f.message);
        }
        Ok::<_, ApiError>(NoteOutput::new(&note_id, &coding, s.debug))
    }
    .await;
    match result {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.respond(s.debug),
    }
}

async fn routing_table(State(state): State<AppState>) -> Response {
    Json(state.0.table.to_records()).into_response()
}

async fn healthz(State(state): State<AppState>) -> Response {
    Json(json!({ "status": "ok", "table_fingerprint": state.0.table.fingerprint() })).into_response()
}

/// Recompute the table's dataset fingerprint from the datasets on disk.
fn check_fingerprint(l: &Loaded, table: &RoutingTable) -> Result<(), CliError> {
    let mut parts = Vec::new();
    for code in table.codes() {
        parts.push((code.to_string(), commands::load_dataset(l, code)?.fingerprint()));
    }
    let current = fingerprint::combine(parts.iter().map(|(c, f)| (c.as_str(), f.as_str())));
    if current == table.fingerprint() {
        Ok(())
    } else {
        Err(CliError::data(format!(
            "datasets changed since the routing table was trained ({} != {}); retrain or pass --allow-fingerprint-mismatch",
            current,
            table.fingerprint()
        )))
    }
}

pub async fn run(l: &Loaded, bind: SocketAddr, allow_fingerprint_mismatch: bool, debug: bool) -> Result<(), CliError> {
    let table = commands::load_table(&l.resolve(&l.config.paths.routing_table))?;
    if let Err(e) = check_fingerprint(l, &table) {
        if !allow_fingerprint_mismatch {
            return Err(e);
        }
        tracing::warn!("{e}");
    }
    for code in table.codes() {
        if l.registry.get(code).is_none() {
            tracing::warn!(code, "routed code is not in the registry and cannot be requested");
        }
    }
    let gateway = l.gateway()?;
    let state = AppState::new(
        gateway,
        table,
        l.registry.clone(),
        l.params().max_in_flight,
        commands::scope(l),
        debug,
    );
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| CliError::usage(format!("cannot bind {bind}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| CliError::usage(e.to_string()))?;
    eprintln!("listening on {addr}");
    axum::serve(listener, app(state))
        .with_graceful_shutdown(shutdown())
        .await
        .map_err(|e| CliError::usage(format!("server: {e}")))
}

async fn shutdown() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
