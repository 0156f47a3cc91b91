//! Per-code routing of clinical SDOH coding tasks to the best-measured LLM backend.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: note parsing, sentence segmentation, gold/negative labels, dataset assembly
//! - [`promptkit`]: prompt templates and response parsing
//! - [`gateway`]: uniform completion interface over HTTP and scripted mock backends
//! - [`synth`]: synthetic positive generation with verifier filtering
//! - [`eval`]: confusion matrices, metrics, and the model × code evaluation matrix
//! - [`router`]: accuracy-argmax routing table and routed classification
//! - [`report`]: best-model tables, baseline comparison, and plot series

pub mod corpus;
pub mod eval;
pub mod fingerprint;
pub mod gateway;
pub mod jsonl;
pub mod promptkit;
pub mod report;
pub mod router;
pub mod synth;
pub mod text;

pub use corpus::{
    CodeRegistry, Corpus, Dataset, LabeledSentence, MedicalNote, SdohCode, Sentence, Source,
};
pub use eval::{ConfusionMatrix, EvalCell, EvalMatrix, IndeterminatePolicy, Metrics};
pub use gateway::{BackendConfig, Gateway, ModelId, RetryPolicy};
pub use promptkit::{ParsedLabel, PromptKit, Verdict};
pub use report::Report;
pub use router::{RouterDecision, RoutingTable};
pub use synth::{SynthBatch, SynthCandidate, SynthStats};
