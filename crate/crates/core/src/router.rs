//! Per-code routing: each code goes to the model with the best measured accuracy.
//!
//! Ties on accuracy go to the higher F1 (an undefined F1 ranks below any
//! defined one), then to the lexicographically smaller model id.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{segment_sentences_in, CodeRegistry, MedicalNote, SdohCode, SegmentScope, Sentence};
use crate::eval::EvalMatrix;
use crate::gateway::{Gateway, GatewayError, ModelId};
use crate::promptkit::{ParsedLabel, Verdict};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RouterError {
    #[error("evaluation matrix is empty")]
    EmptyMatrix,
    #[error("no model has a defined accuracy for code {0:?}")]
    NoUsableModel(String),
    #[error("unknown code {0:?}")]
    UnknownCode(String),
    #[error("routing table file: {0}")]
    BadTable(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// A model's standing on one code.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub model: ModelId,
    pub accuracy: f64,
    pub f1: Option<f64>,
}

/// Ranking used for selection: `Greater` means `a` is preferred over `b`.
pub fn compare(a: &Candidate, b: &Candidate) -> Ordering {
    a.accuracy
        .total_cmp(&b.accuracy)
        .then_with(|| match (a.f1, b.f1) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => Ordering::Greater,
            (None, Some(_)) => Ordering::Less,
            (None, None) => Ordering::Equal,
        })
        .then_with(|| b.model.cmp(&a.model))
}

/// Index of the preferred candidate, or `None` for an empty slice.
pub fn choose(candidates: &[Candidate]) -> Option<usize> {
    (0..candidates.len()).max_by(|&i, &j| compare(&candidates[i], &candidates[j]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouterDecision {
    pub code_id: String,
    pub model: ModelId,
    pub training_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteEntry {
    pub model: ModelId,
    pub training_accuracy: f64,
    pub training_f1: Option<f64>,
}

/// Persisted routing table line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRecord {
    pub code_id: String,
    pub model: ModelId,
    pub training_accuracy: f64,
    #[serde(default)]
    pub training_f1: Option<f64>,
    pub fingerprint: String,
    pub trained_at: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTable {
    entries: BTreeMap<String, RouteEntry>,
    fingerprint: String,
    trained_at: String,
}

impl RoutingTable {
    /// Pick the best model per code in `matrix`. Cells without a defined
    /// accuracy are skipped with a warning.
    pub fn train(matrix: &EvalMatrix, trained_at: impl Into<String>) -> Result<Self, RouterError> {
        if matrix.is_empty() {
            return Err(RouterError::EmptyMatrix);
        }
        let mut entries = BTreeMap::new();
        for code_id in matrix.codes() {
            let mut candidates = Vec::new();
            for cell in matrix.cells_for_code(code_id) {
                match cell.metrics {
                    Some(m) => candidates.push(Candidate {
                        model: cell.model.clone(),
                        accuracy: m.accuracy,
                        f1: m.f1,
                    }),
                    None => tracing::warn!(model = %cell.model, code = code_id, "no scored items; skipped"),
                }
            }
            let best = choose(&candidates).ok_or_else(|| RouterError::NoUsableModel(code_id.to_string()))?;
            let c = candidates.swap_remove(best);
            entries.insert(
                code_id.to_string(),
                RouteEntry {
                    model: c.model,
                    training_accuracy: c.accuracy,
                    training_f1: c.f1,
                },
            );
        }
        Ok(RoutingTable {
            entries,
            fingerprint: matrix.fingerprint(),
            trained_at: trained_at.into(),
        })
    }

    pub fn entries(&self) -> &BTreeMap<String, RouteEntry> {
        &self.entries
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fingerprint of the evaluation matrix the table was trained on.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn trained_at(&self) -> &str {
        &self.trained_at
    }

    pub fn route(&self, code_id: &str) -> Result<RouterDecision, RouterError> {
        let e = self
            .entries
            .get(code_id)
            .ok_or_else(|| RouterError::UnknownCode(code_id.to_string()))?;
        Ok(RouterDecision {
            code_id: code_id.to_string(),
            model: e.model.clone(),
            training_accuracy: e.training_accuracy,
        })
    }

    pub fn to_records(&self) -> Vec<RouteRecord> {
        self.entries
            .iter()
            .map(|(code_id, e)| RouteRecord {
                code_id: code_id.clone(),
                model: e.model.clone(),
                training_accuracy: e.training_accuracy,
                training_f1: e.training_f1,
                fingerprint: self.fingerprint.clone(),
                trained_at: self.trained_at.clone(),
            })
            .collect()
    }

    pub fn from_records(records: Vec<RouteRecord>) -> Result<Self, RouterError> {
        let first = records
            .first()
            .ok_or_else(|| RouterError::BadTable("no entries".into()))?;
        let (fingerprint, trained_at) = (first.fingerprint.clone(), first.trained_at.clone());
        let mut entries = BTreeMap::new();
        for r in records {
            if r.fingerprint != fingerprint || r.trained_at != trained_at {
                return Err(RouterError::BadTable(format!(
                    "entry for {:?} has different provenance",
                    r.code_id
                )));
            }
            let entry = RouteEntry {
                model: r.model,
                training_accuracy: r.training_accuracy,
                training_f1: r.training_f1,
            };
            if entries.insert(r.code_id.clone(), entry).is_some() {
                return Err(RouterError::BadTable(format!("duplicate entry for {:?}", r.code_id)));
            }
        }
        Ok(RoutingTable {
            entries,
            fingerprint,
            trained_at,
        })
    }
}

/// Map free-text input to a code: exact case-insensitive match on the code id
/// or its keyword phrase. Nothing fuzzy.
pub fn resolve_code<'a>(registry: &'a CodeRegistry, input: &str) -> Result<&'a SdohCode, RouterError> {
    registry
        .resolve(input)
        .ok_or_else(|| RouterError::UnknownCode(input.to_string()))
}

/// Classify a sentence with the model routed for `code`.
pub async fn classify_routed(
    gateway: &Gateway,
    table: &RoutingTable,
    code: &SdohCode,
    sentence_text: &str,
) -> Result<ParsedLabel, RouterError> {
    let decision = table.route(&code.code_id)?;
    Ok(gateway
        .classify_sentence(&decision.model, code, sentence_text)
        .await?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub sentence: Sentence,
    pub label: ParsedLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentenceFailure {
    pub code_id: String,
    pub sentence_index: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoteCoding {
    /// Positive evidence per requested code; empty when nothing was flagged.
    pub evidence: BTreeMap<String, Vec<Evidence>>,
    pub errors: Vec<SentenceFailure>,
}

/// Classify every sentence of `note` for each code with its routed model.
pub async fn code_note(
    gateway: &Gateway,
    table: &RoutingTable,
    note: &MedicalNote,
    codes: &[SdohCode],
    scope: SegmentScope,
    max_in_flight: usize,
) -> Result<NoteCoding, RouterError> {
    let decisions = codes
        .iter()
        .map(|c| table.route(&c.code_id))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = NoteCoding::default();
    if codes.is_empty() {
        return Ok(out);
    }
    let sentences = segment_sentences_in(note, scope);
    let texts: Vec<String> = sentences.iter().map(|s| s.text.clone()).collect();
    for (code, decision) in codes.iter().zip(decisions) {
        let results = gateway
            .batch_classify(&decision.model, code, &texts, max_in_flight)
            .await?;
        let mut found = Vec::new();
        for (sentence, result) in sentences.iter().zip(results) {
            match result {
                Ok(label) if label.verdict == Verdict::Positive => found.push(Evidence {
                    sentence: sentence.clone(),
                    label,
                }),
                Ok(_) => {}
                Err(e) => out.errors.push(SentenceFailure {
                    code_id: code.code_id.clone(),
                    sentence_index: sentence.index,
                    message: e.to_string(),
                }),
            }
        }
        out.evidence.insert(code.code_id.clone(), found);
    }
    Ok(out)
}
