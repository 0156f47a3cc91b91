//! Synthetic positive generation with verifier filtering.
//!
//! Each round samples gold exemplars, asks the generator for new sentences
//! under two prompt variants (plain and keyword-free), discards candidates
//! that repeat a gold sentence or an earlier candidate, and has the verifier
//! classify the rest. Only candidates the verifier answers "yes" for are kept.

use std::collections::HashSet;
use std::fmt;
use std::sync::LazyLock;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledSentence, SdohCode};
use crate::gateway::{Gateway, GatewayError, GenerationParams, ModelId};
use crate::promptkit::{parse_label, PromptError, Verdict};
use crate::text::normalize;

pub const DEFAULT_EXEMPLARS: usize = 5;
pub const DEFAULT_PER_VARIANT: usize = 10;
pub const DEFAULT_ROUND_CAP: usize = 20;
pub const DEFAULT_GENERATION_TEMPERATURE: f64 = 0.8;
/// Generation responses list several sentences, so they need more room than a label.
pub const DEFAULT_GENERATION_MAX_TOKENS: u32 = 1024;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("no gold sentences for code {0:?}")]
    EmptyGold(String),
    #[error("exemplar count must be at least 1")]
    InvalidK,
    #[error("{model} returned no usable lines")]
    MalformedResponse { model: String },
    #[error("candidate is not pending")]
    NotPending,
    #[error("kept {kept} of {target} requested synthetic sentences for {code_id:?} after {rounds} rounds")]
    TargetUnreached {
        code_id: String,
        kept: usize,
        target: usize,
        rounds: usize,
        batch: Box<SynthBatch>,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    NoKeyword,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Plain => "plain",
            Variant::NoKeyword => "no_keyword",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateVerdict {
    Pending,
    Accepted,
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// The verifier answered no.
    Rejected,
    /// The verifier's answer could not be read as yes or no.
    Indeterminate,
    /// Every verification attempt failed at the backend.
    VerifierError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCandidate {
    pub code_id: String,
    pub text: String,
    pub variant: Variant,
    pub verdict: CandidateVerdict,
    pub generator: ModelId,
    pub verifier: Option<ModelId>,
    pub drop_reason: Option<DropReason>,
}

impl SynthCandidate {
    pub fn pending(code_id: &str, text: impl Into<String>, variant: Variant, generator: ModelId) -> Self {
        SynthCandidate {
            code_id: code_id.to_string(),
            text: text.into(),
            variant,
            verdict: CandidateVerdict::Pending,
            generator,
            verifier: None,
            drop_reason: None,
        }
    }

    pub fn is_accepted(&self) -> bool {
        self.verdict == CandidateVerdict::Accepted
    }

    fn settle(mut self, verifier: &ModelId, verdict: Verdict) -> Self {
        self.verifier = Some(verifier.clone());
        match verdict {
            Verdict::Positive => self.verdict = CandidateVerdict::Accepted,
            Verdict::Negative => self.drop(DropReason::Rejected),
            Verdict::Indeterminate => self.drop(DropReason::Indeterminate),
        }
        self
    }

    fn drop(&mut self, reason: DropReason) {
        self.verdict = CandidateVerdict::Dropped;
        self.drop_reason = Some(reason);
    }

    pub fn to_record(&self) -> CandidateRecord {
        CandidateRecord {
            code_id: self.code_id.clone(),
            text: self.text.clone(),
            variant: self.variant,
            verdict: self.verdict,
            generator: self.generator.clone(),
            verifier: self.verifier.clone(),
            drop_reason: self.drop_reason,
        }
    }
}

/// One persisted candidate line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub code_id: String,
    pub text: String,
    pub variant: Variant,
    pub verdict: CandidateVerdict,
    pub generator: ModelId,
    pub verifier: Option<ModelId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_reason: Option<DropReason>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthStats {
    pub generated: usize,
    pub dropped: usize,
    pub kept: usize,
    /// Candidates discarded as repeats of gold or earlier candidates. Not persisted.
    pub deduped: usize,
    /// Keyword-free candidates that still contained the keyword phrase.
    pub keyword_violations: usize,
    /// Dropped candidates whose verification never succeeded.
    pub verifier_errors: usize,
    pub rounds: usize,
}

impl SynthStats {
    pub fn balanced(&self) -> bool {
        self.generated == self.kept + self.dropped + self.deduped
    }
}

/// Stats sidecar written next to a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub code_id: String,
    pub generator: ModelId,
    pub verifier: ModelId,
    pub seed: u64,
    pub target_kept: usize,
    #[serde(flatten)]
    pub stats: SynthStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBatch {
    pub code_id: String,
    pub generator: ModelId,
    pub verifier: ModelId,
    /// Accepted and dropped candidates in generation order.
    pub candidates: Vec<SynthCandidate>,
    pub stats: SynthStats,
    pub seed: u64,
    pub target_kept: usize,
}

impl SynthBatch {
    pub fn accepted(&self) -> impl Iterator<Item = &SynthCandidate> {
        self.candidates.iter().filter(|c| c.is_accepted())
    }

    /// Accepted candidates as synthetic positives.
    pub fn positives(&self) -> Vec<LabeledSentence> {
        self.accepted()
            .enumerate()
            .map(|(i, c)| LabeledSentence::synthetic(i, c.text.clone(), &self.code_id))
            .collect()
    }

    pub fn to_records(&self) -> Vec<CandidateRecord> {
        self.candidates.iter().map(SynthCandidate::to_record).collect()
    }

    pub fn summary(&self) -> BatchSummary {
        BatchSummary {
            code_id: self.code_id.clone(),
            generator: self.generator.clone(),
            verifier: self.verifier.clone(),
            seed: self.seed,
            target_kept: self.target_kept,
            stats: self.stats,
        }
    }
}

/// Synthetic positives from persisted candidate records for one code.
pub fn positives_from_records(code_id: &str, records: &[CandidateRecord]) -> Vec<LabeledSentence> {
    records
        .iter()
        .filter(|r| r.code_id == code_id && r.verdict == CandidateVerdict::Accepted)
        .enumerate()
        .map(|(i, r)| LabeledSentence::synthetic(i, r.text.clone(), code_id))
        .collect()
}

/// Uniformly pick `min(k, |gold|)` distinct gold texts.
pub fn sample_exemplars(gold: &[LabeledSentence], k: usize, seed: u64) -> Result<Vec<String>, SynthError> {
    let Some(first) = gold.first() else {
        return Err(SynthError::EmptyGold(String::new()));
    };
    if k == 0 {
        return Err(SynthError::InvalidK);
    }
    let mut seen = HashSet::new();
    let texts: Vec<&str> = gold
        .iter()
        .map(LabeledSentence::text)
        .filter(|t| seen.insert(normalize(t)))
        .collect();
    debug_assert!(!texts.is_empty(), "gold for {} has no texts", first.code_id);
    let k = k.min(texts.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, texts.len(), k)
        .into_iter()
        .map(|i| texts[i].to_string())
        .collect())
}

static LIST_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(?:[-*•]+\s*|\(?\d{1,3}[.):]\s*|\d{1,3}\s+-\s+)").expect("valid regex")
});

/// Split a generator response into candidate sentences.
pub fn parse_candidates(response: &str) -> Vec<String> {
    response
        .lines()
        .map(|l| LIST_MARKER.replace(l, "").trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

/// Request `per_variant` sentences under each prompt variant.
pub async fn generate_candidates(
    gateway: &Gateway,
    code: &SdohCode,
    exemplars: &[String],
    generator: &ModelId,
    per_variant: usize,
    params: GenerationParams,
) -> Result<Vec<SynthCandidate>, SynthError> {
    let mut out = Vec::new();
    for variant in [Variant::Plain, Variant::NoKeyword] {
        let prompt = gateway.prompts().render_generation_prompt(
            code,
            exemplars,
            variant == Variant::NoKeyword,
            per_variant,
        )?;
        let response = gateway.complete(generator, &prompt, params).await?;
        out.extend(
            parse_candidates(&response.text)
                .into_iter()
                .take(per_variant)
                .map(|t| SynthCandidate::pending(&code.code_id, t, variant, generator.clone())),
        );
    }
    if out.is_empty() {
        return Err(SynthError::MalformedResponse {
            model: generator.to_string(),
        });
    }
    Ok(out)
}

/// Ask the verifier about one pending candidate. A backend error leaves the
/// candidate pending and is returned to the caller.
pub async fn verify_candidate(
    gateway: &Gateway,
    code: &SdohCode,
    candidate: SynthCandidate,
    verifier: &ModelId,
) -> Result<SynthCandidate, SynthError> {
    if candidate.verdict != CandidateVerdict::Pending {
        return Err(SynthError::NotPending);
    }
    let prompt = gateway.prompts().render_verification_prompt(code, &candidate.text);
    let out = gateway
        .complete(verifier, &prompt, GenerationParams::deterministic())
        .await?;
    Ok(candidate.settle(verifier, parse_label(&out.text).verdict))
}

fn is_fatal(e: &GatewayError) -> bool {
    matches!(e, GatewayError::AuthError { .. }) || e.is_config()
}

#[derive(Debug, Clone, Copy)]
pub struct SynthOptions {
    pub exemplars: usize,
    pub per_variant: usize,
    pub round_cap: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    /// Extra verification passes for candidates whose verification failed.
    pub verify_retries: usize,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            exemplars: DEFAULT_EXEMPLARS,
            per_variant: DEFAULT_PER_VARIANT,
            round_cap: DEFAULT_ROUND_CAP,
            temperature: DEFAULT_GENERATION_TEMPERATURE,
            max_tokens: DEFAULT_GENERATION_MAX_TOKENS,
            max_in_flight: 4,
            verify_retries: 1,
            seed: 0,
        }
    }
}

/// Verify a round's fresh candidates concurrently. Returns settled candidates
/// in input order.
async fn verify_round(
    gateway: &Gateway,
    code: &SdohCode,
    fresh: Vec<SynthCandidate>,
    verifier: &ModelId,
    opts: &SynthOptions,
) -> Result<Vec<SynthCandidate>, SynthError> {
    let mut settled: Vec<Option<SynthCandidate>> = vec![None; fresh.len()];
    let mut open: Vec<usize> = (0..fresh.len()).collect();
    for pass in 0..=opts.verify_retries {
        if open.is_empty() {
            break;
        }
        let prompts: Vec<String> = open
            .iter()
            .map(|&i| gateway.prompts().render_verification_prompt(code, &fresh[i].text))
            .collect();
        let results = gateway
            .batch_complete(verifier, &prompts, GenerationParams::deterministic(), opts.max_in_flight)
            .await?;
        let mut still_open = Vec::new();
        for (&i, result) in open.iter().zip(results) {
            match result {
                Ok(out) => {
                    let verdict = parse_label(&out.text).verdict;
                    settled[i] = Some(fresh[i].clone().settle(verifier, verdict));
                }
                Err(e) if is_fatal(&e) => return Err(e.into()),
                Err(e) => {
                    tracing::warn!(%verifier, pass, error = %e, "verification failed");
                    still_open.push(i);
                }
            }
        }
        open = still_open;
    }
    for i in open {
        let mut c = fresh[i].clone();
        c.verifier = Some(verifier.clone());
        c.drop(DropReason::VerifierError);
        settled[i] = Some(c);
    }
    Ok(settled.into_iter().flatten().collect())
}

/// Generate and verify until `target_kept` candidates are accepted or the
/// round cap is reached.
pub async fn run_pipeline(
    gateway: &Gateway,
    code: &SdohCode,
    gold: &[LabeledSentence],
    generator: &ModelId,
    verifier: &ModelId,
    target_kept: usize,
    opts: SynthOptions,
) -> Result<SynthBatch, SynthError> {
    let gold: Vec<LabeledSentence> = gold
        .iter()
        .filter(|g| g.code_id == code.code_id)
        .cloned()
        .collect();
    if gold.is_empty() {
        return Err(SynthError::EmptyGold(code.code_id.clone()));
    }
    if opts.exemplars == 0 {
        return Err(SynthError::InvalidK);
    }
    let mut batch = SynthBatch {
        code_id: code.code_id.clone(),
        generator: generator.clone(),
        verifier: verifier.clone(),
        candidates: Vec::new(),
        stats: SynthStats::default(),
        seed: opts.seed,
        target_kept,
    };
    let mut seen: HashSet<String> = gold.iter().map(|g| normalize(g.text())).collect();
    let keyword = code.keyword_phrase.to_lowercase();

    while batch.stats.kept < target_kept && batch.stats.rounds < opts.round_cap {
        let round_seed = opts.seed.wrapping_add(batch.stats.rounds as u64);
        batch.stats.rounds += 1;
        let exemplars = sample_exemplars(&gold, opts.exemplars, round_seed)?;
        let params = GenerationParams {
            temperature: Some(opts.temperature),
            max_tokens: Some(opts.max_tokens),
            seed: Some(round_seed),
        };
        let candidates =
            match generate_candidates(gateway, code, &exemplars, generator, opts.per_variant, params).await {
                Ok(c) => c,
                Err(SynthError::MalformedResponse { model }) => {
                    tracing::warn!(%model, round = batch.stats.rounds, "generator returned nothing usable");
                    continue;
                }
                Err(e) => return Err(e),
            };

        let mut fresh = Vec::new();
        for c in candidates {
            batch.stats.generated += 1;
            if !seen.insert(normalize(&c.text)) {
                batch.stats.deduped += 1;
                continue;
            }
            if c.variant == Variant::NoKeyword && c.text.to_lowercase().contains(&keyword) {
                batch.stats.keyword_violations += 1;
            }
            fresh.push(c);
        }

        for c in verify_round(gateway, code, fresh, verifier, &opts).await? {
            match c.drop_reason {
                None => batch.stats.kept += 1,
                Some(reason) => {
                    batch.stats.dropped += 1;
                    if reason == DropReason::VerifierError {
                        batch.stats.verifier_errors += 1;
                    }
                }
            }
            batch.candidates.push(c);
        }
    }
    debug_assert!(batch.stats.balanced());

    if batch.stats.kept < target_kept {
        tracing::warn!(
            code = %code.code_id,
            kept = batch.stats.kept,
            target = target_kept,
            "round cap reached before the target"
        );
        return Err(SynthError::TargetUnreached {
            code_id: code.code_id.clone(),
            kept: batch.stats.kept,
            target: target_kept,
            rounds: batch.stats.rounds,
            batch: Box::new(batch),
        });
    }
    Ok(batch)
}
