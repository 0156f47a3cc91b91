use std::path::Path;

use sdoh_core::corpus::CorpusError;
use sdoh_core::eval::EvalError;
use sdoh_core::gateway::GatewayError;
use sdoh_core::jsonl::JsonlError;
use sdoh_core::promptkit::PromptError;
use sdoh_core::report::ReportError;
use sdoh_core::router::RouterError;
use sdoh_core::synth::SynthError;

/// Process exit status. The numeric values are a stable contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// Bad flags, bad config, missing input files.
    Usage = 1,
    /// Input data is malformed or does not support the request.
    Data = 2,
    /// A model backend failed.
    Backend = 3,
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Data, message: message.into() }
    }

    pub fn backend(message: impl Into<String>) -> Self {
        CliError { kind: ExitKind::Backend, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::data(format!("{}: {e}", path.display()))
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        if e.is_config() {
            CliError::usage(e.to_string())
        } else {
            CliError::backend(e.to_string())
        }
    }
}

impl From<JsonlError> for CliError {
    fn from(e: JsonlError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        CliError::usage(format!("prompt templates: {e}"))
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Gateway(g) => g.into(),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<RouterError> for CliError {
    fn from(e: RouterError) -> Self {
        match e {
            RouterError::Gateway(g) => g.into(),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Gateway(g) => g.into(),
            SynthError::Prompt(p) => p.into(),
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::UnknownBaseline(_) => CliError::usage(e.to_string()),
            ReportError::Router(r) => r.into(),
            other => CliError::data(other.to_string()),
        }
    }
}
