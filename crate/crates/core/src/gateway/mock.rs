//! Deterministic scripted backend for offline runs and tests.
//!
//! A [`ScriptedBackend`] answers from an ordered rule list: the first rule
//! whose matcher accepts the prompt supplies the reply, otherwise the default
//! reply is used. Replies may fail a fixed number of times per prompt before
//! succeeding, which is tracked per (rule, prompt) so concurrent batches stay
//! deterministic. The backend also records call counts and the peak number of
//! concurrent calls it observed.
//!
//! In text replies, `{call}` expands to the 1-based sequence number of the
//! call. That is only deterministic when calls are issued sequentially.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendFailure, CompletionRequest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    Exact(String),
    /// Every fragment must occur in the prompt.
    Contains(Vec<String>),
    Any,
}

impl Matcher {
    pub fn contains<I, S>(fragments: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Matcher::Contains(fragments.into_iter().map(Into::into).collect())
    }

    fn accepts(&self, prompt: &str) -> bool {
        match self {
            Matcher::Exact(p) => p == prompt,
            Matcher::Contains(parts) => parts.iter().all(|p| prompt.contains(p.as_str())),
            Matcher::Any => true,
        }
    }
}

type ReplyFn = dyn Fn(&CompletionRequest) -> Result<String, BackendFailure> + Send + Sync;

#[derive(Clone)]
pub enum Reply {
    Text(String),
    Fail(BackendFailure),
    /// Fail `times` times for each distinct prompt, then answer with `then`.
    FailTimes {
        times: usize,
        failure: BackendFailure,
        then: Box<Reply>,
    },
    Func(Arc<ReplyFn>),
}

impl fmt::Debug for Reply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reply::Text(t) => f.debug_tuple("Text").field(t).finish(),
            Reply::Fail(e) => f.debug_tuple("Fail").field(e).finish(),
            Reply::FailTimes { times, failure, then } => f
                .debug_struct("FailTimes")
                .field("times", times)
                .field("failure", failure)
                .field("then", then)
                .finish(),
            Reply::Func(_) => f.write_str("Func(..)"),
        }
    }
}

impl Reply {
    pub fn text(t: impl Into<String>) -> Self {
        Reply::Text(t.into())
    }

    pub fn fail(failure: BackendFailure) -> Self {
        Reply::Fail(failure)
    }

    pub fn fail_times(times: usize, failure: BackendFailure, then: Reply) -> Self {
        Reply::FailTimes {
            times,
            failure,
            then: Box::new(then),
        }
    }

    pub fn func<F>(f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<String, BackendFailure> + Send + Sync + 'static,
    {
        Reply::Func(Arc::new(f))
    }
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    rules: Vec<(Matcher, Reply)>,
    default: Option<Reply>,
    delay: Duration,
    failures_seen: Mutex<HashMap<(usize, String), usize>>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    last_request: Mutex<Option<CompletionRequest>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// A backend answering every prompt with the same text.
    pub fn fixed(text: impl Into<String>) -> Self {
        Self::new().default_reply(Reply::text(text))
    }

    pub fn rule(mut self, matcher: Matcher, reply: Reply) -> Self {
        self.rules.push((matcher, reply));
        self
    }

    pub fn default_reply(mut self, reply: Reply) -> Self {
        self.default = Some(reply);
        self
    }

    /// Sleep this long inside every call (lets tests observe concurrency).
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn from_spec(spec: &MockSpec) -> Result<Self, String> {
        let mut b = ScriptedBackend::new().with_delay(Duration::from_millis(spec.delay_ms));
        for (i, r) in spec.rules.iter().enumerate() {
            let matcher = match &r.equals {
                Some(p) => Matcher::Exact(p.clone()),
                None if r.contains.is_empty() => Matcher::Any,
                None => Matcher::Contains(r.contains.clone()),
            };
            let reply = match (r.status, r.fail_times, &r.reply) {
                (Some(status), None, _) => Reply::fail(status_failure(status)),
                (Some(status), Some(n), Some(text)) => {
                    Reply::fail_times(n, status_failure(status), Reply::text(text.clone()))
                }
                (None, None, Some(text)) => Reply::text(text.clone()),
                (Some(_), Some(_), None) => {
                    return Err(format!("mock rule {i}: fail_times needs a reply to fall back to"))
                }
                (None, Some(_), _) => return Err(format!("mock rule {i}: fail_times needs a status")),
                (None, None, None) => return Err(format!("mock rule {i}: needs a reply or a status")),
            };
            b = b.rule(matcher, reply);
        }
        if let Some(d) = &spec.default_reply {
            b = b.default_reply(Reply::text(d.clone()));
        }
        Ok(b)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn last_request(&self) -> Option<CompletionRequest> {
        self.last_request.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn answer(&self, slot: usize, reply: &Reply, req: &CompletionRequest, call: usize) -> Result<String, BackendFailure> {
        match reply {
            Reply::Text(t) => Ok(t.replace("{call}", &call.to_string())),
            Reply::Fail(f) => Err(f.clone()),
            Reply::FailTimes { times, failure, then } => {
                let mut seen = self.failures_seen.lock().unwrap_or_else(|e| e.into_inner());
                let n = seen.entry((slot, req.prompt.clone())).or_insert(0);
                if *n < *times {
                    *n += 1;
                    Err(failure.clone())
                } else {
                    drop(seen);
                    self.answer(slot, then, req, call)
                }
            }
            Reply::Func(f) => f(req),
        }
    }
}

fn status_failure(status: u16) -> BackendFailure {
    BackendFailure::Status {
        status,
        body: "scripted failure".into(),
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl Backend for ScriptedBackend {
    async fn send(&self, request: &CompletionRequest) -> Result<String, BackendFailure> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.peak.fetch_max(now, Ordering::SeqCst);
        *self.last_request.lock().unwrap_or_else(|e| e.into_inner()) = Some(request.clone());

        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }

        let hit = self
            .rules
            .iter()
            .enumerate()
            .find(|(_, (m, _))| m.accepts(&request.prompt));
        match (hit, &self.default) {
            (Some((i, (_, reply))), _) => self.answer(i, reply, request, call),
            (None, Some(reply)) => self.answer(usize::MAX, reply, request, call),
            (None, None) => Err(BackendFailure::Status {
                status: 400,
                body: "no scripted reply for prompt".into(),
            }),
        }
    }
}

/// Mock backend description as it appears in a backend config file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSpec {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_reply: Option<String>,
    #[serde(default)]
    pub delay_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    /// Match the whole prompt exactly; takes precedence over `contains`.
    #[serde(default)]
    pub equals: Option<String>,
    /// Match when every fragment occurs in the prompt; empty matches anything.
    #[serde(default)]
    pub contains: Vec<String>,
    #[serde(default)]
    pub reply: Option<String>,
    /// Fail with this HTTP status (always, or `fail_times` times per prompt).
    #[serde(default)]
    pub status: Option<u16>,
    #[serde(default)]
    pub fail_times: Option<usize>,
}
