//! Confusion-matrix scoring, metrics, and the model × code evaluation matrix.
//!
//! Metrics follow the usual definitions: accuracy = (TP+TN)/total,
//! precision = TP/(TP+FP), recall = TP/(TP+FN), F1 = 2PR/(P+R). A component
//! whose denominator is zero is undefined (`None`, serialized as `null`); F1
//! is undefined whenever precision or recall is, or when both are zero.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabeledSentence, SdohCode, SYNTHETIC_NOTE_ID};
use crate::fingerprint;
use crate::gateway::{Gateway, GatewayError, ModelId};
use crate::promptkit::Verdict;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("{predictions} predictions but {truths} truth labels")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("no dataset for code {0:?}")]
    MissingDataset(String),
    #[error("dataset for code {0:?} is empty")]
    EmptyDataset(String),
    #[error("cells for code {code_id:?} were scored against different datasets")]
    FingerprintMismatch { code_id: String },
    #[error("duplicate cell for ({model}, {code_id})")]
    DuplicateCell { model: String, code_id: String },
    #[error("record {index}: {message}")]
    BadRecord { index: usize, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// How indeterminate model answers are scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndeterminatePolicy {
    /// Count as a negative prediction.
    #[default]
    Negative,
    /// Leave the item out of the confusion matrix.
    Exclude,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, predicted: bool, truth: bool) {
        match (predicted, truth) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let total = c.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let accuracy = (c.tp + c.tn) as f64 / total as f64;
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    // 2PR/(P+R) reduces to 2TP/(2TP+FP+FN). The single division keeps equal
    // ratios bit-identical, which the router's F1 tie-break relies on.
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        _ => None,
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
    })
}

/// Count predictions against truths. Indeterminate verdicts follow `policy`.
pub fn score(
    predictions: &[Verdict],
    truths: &[bool],
    policy: IndeterminatePolicy,
) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    let mut c = ConfusionMatrix::default();
    for (&v, &t) in predictions.iter().zip(truths) {
        match (v, policy) {
            (Verdict::Positive, _) => c.record(true, t),
            (Verdict::Negative, _) | (Verdict::Indeterminate, IndeterminatePolicy::Negative) => {
                c.record(false, t)
            }
            (Verdict::Indeterminate, IndeterminatePolicy::Exclude) => {}
        }
    }
    Ok(c)
}

/// Note-level confusion: a note is truly positive when any of its sentences
/// is, and predicted positive when any sentence is predicted positive.
/// Synthetic examples and unscorable (`None`) items are ignored.
pub fn aggregate_by_note(
    examples: &[LabeledSentence],
    predictions: &[Option<Verdict>],
    policy: IndeterminatePolicy,
) -> Result<ConfusionMatrix, EvalError> {
    if examples.len() != predictions.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: examples.len(),
        });
    }
    // note_id -> (truth, predicted)
    let mut notes: BTreeMap<&str, (bool, bool)> = BTreeMap::new();
    for (ex, pred) in examples.iter().zip(predictions) {
        if ex.sentence.note_id == SYNTHETIC_NOTE_ID {
            continue;
        }
        let predicted = match (pred, policy) {
            (None, _) | (Some(Verdict::Indeterminate), IndeterminatePolicy::Exclude) => continue,
            (Some(v), _) => *v == Verdict::Positive,
        };
        let entry = notes.entry(ex.sentence.note_id.as_str()).or_default();
        entry.0 |= ex.label();
        entry.1 |= predicted;
    }
    let mut c = ConfusionMatrix::default();
    for (truth, predicted) in notes.into_values() {
        c.record(predicted, truth);
    }
    Ok(c)
}

/// Arithmetic mean of the defined values, with the number left out.
pub fn mean_defined<I: IntoIterator<Item = Option<f64>>>(values: I) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => skipped += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), skipped)
}

// ---------------------------------------------------------------------------
// Cells and the matrix
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EvalCell {
    pub model: ModelId,
    pub code_id: String,
    pub confusion: ConfusionMatrix,
    /// `None` when nothing could be scored.
    pub metrics: Option<Metrics>,
    /// Items the backend failed on; excluded from `confusion`.
    pub n_errors: u64,
    /// Fingerprint of the dataset the cell was scored against.
    pub fingerprint: String,
}

impl EvalCell {
    pub fn new(
        model: ModelId,
        code_id: impl Into<String>,
        confusion: ConfusionMatrix,
        n_errors: u64,
        fingerprint: impl Into<String>,
    ) -> Self {
        EvalCell {
            model,
            code_id: code_id.into(),
            metrics: metrics(&confusion).ok(),
            confusion,
            n_errors,
            fingerprint: fingerprint.into(),
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        self.metrics.map(|m| m.accuracy)
    }

    pub fn f1(&self) -> Option<f64> {
        self.metrics.and_then(|m| m.f1)
    }

    pub fn to_record(&self) -> EvalRecord {
        let m = self.metrics;
        EvalRecord {
            model: self.model.clone(),
            code_id: self.code_id.clone(),
            tp: self.confusion.tp,
            tn: self.confusion.tn,
            fp: self.confusion.fp,
            fn_: self.confusion.fn_,
            accuracy: m.map(|m| m.accuracy),
            precision: m.and_then(|m| m.precision),
            recall: m.and_then(|m| m.recall),
            f1: m.and_then(|m| m.f1),
            n_errors: self.n_errors,
            fingerprint: self.fingerprint.clone(),
        }
    }
}

/// Export row of an [`EvalMatrix`]. Field order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model: ModelId,
    pub code_id: String,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub n_errors: u64,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalMatrix {
    cells: BTreeMap<(ModelId, String), EvalCell>,
    fingerprints: BTreeMap<String, String>,
}

impl EvalMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a cell. Every cell of a code must carry the same dataset fingerprint.
    pub fn insert(&mut self, cell: EvalCell) -> Result<(), EvalError> {
        match self.fingerprints.get(&cell.code_id) {
            Some(fp) if *fp != cell.fingerprint => {
                return Err(EvalError::FingerprintMismatch {
                    code_id: cell.code_id,
                })
            }
            Some(_) => {}
            None => {
                self.fingerprints
                    .insert(cell.code_id.clone(), cell.fingerprint.clone());
            }
        }
        let key = (cell.model.clone(), cell.code_id.clone());
        if self.cells.contains_key(&key) {
            return Err(EvalError::DuplicateCell {
                model: key.0.to_string(),
                code_id: key.1,
            });
        }
        self.cells.insert(key, cell);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> impl Iterator<Item = &EvalCell> {
        self.cells.values()
    }

    pub fn cell(&self, model: &ModelId, code_id: &str) -> Option<&EvalCell> {
        self.cells.get(&(model.clone(), code_id.to_string()))
    }

    pub fn models(&self) -> BTreeSet<&ModelId> {
        self.cells.keys().map(|(m, _)| m).collect()
    }

    pub fn codes(&self) -> BTreeSet<&str> {
        self.fingerprints.keys().map(String::as_str).collect()
    }

    pub fn cells_for_code<'a>(&'a self, code_id: &'a str) -> impl Iterator<Item = &'a EvalCell> + 'a {
        self.cells.values().filter(move |c| c.code_id == code_id)
    }

    /// The same matrix minus one model's cells. Dataset fingerprints are kept.
    pub fn without_model(&self, model: &ModelId) -> EvalMatrix {
        EvalMatrix {
            cells: self
                .cells
                .iter()
                .filter(|((m, _), _)| m != model)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            fingerprints: self.fingerprints.clone(),
        }
    }

    pub fn dataset_fingerprints(&self) -> &BTreeMap<String, String> {
        &self.fingerprints
    }

    /// Combined fingerprint over every code's dataset fingerprint.
    pub fn fingerprint(&self) -> String {
        fingerprint::combine(
            self.fingerprints
                .iter()
                .map(|(c, f)| (c.as_str(), f.as_str())),
        )
    }

    pub fn to_records(&self) -> Vec<EvalRecord> {
        self.cells.values().map(EvalCell::to_record).collect()
    }

    /// Rebuild from exported rows. Metrics are recomputed from the counts and
    /// must agree with the stored values.
    pub fn from_records(records: Vec<EvalRecord>) -> Result<Self, EvalError> {
        let mut m = EvalMatrix::new();
        for (index, r) in records.into_iter().enumerate() {
            let cell = EvalCell::new(
                r.model.clone(),
                r.code_id.clone(),
                ConfusionMatrix::new(r.tp, r.tn, r.fp, r.fn_),
                r.n_errors,
                r.fingerprint.clone(),
            );
            let stored = [r.accuracy, r.precision, r.recall, r.f1];
            let m_ = cell.metrics;
            let derived = [
                m_.map(|x| x.accuracy),
                m_.and_then(|x| x.precision),
                m_.and_then(|x| x.recall),
                m_.and_then(|x| x.f1),
            ];
            let agree = stored.iter().zip(&derived).all(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
                (None, None) => true,
                _ => false,
            });
            if !agree {
                return Err(EvalError::BadRecord {
                    index,
                    message: format!(
                        "metrics for ({}, {}) do not match their confusion counts",
                        r.model, r.code_id
                    ),
                });
            }
            m.insert(cell)?;
        }
        Ok(m)
    }
}

// ---------------------------------------------------------------------------
// Running evaluations
// ---------------------------------------------------------------------------

/// A cell plus the per-item verdicts (`None` for backend failures).
#[derive(Debug, Clone)]
pub struct DetailedCell {
    pub cell: EvalCell,
    pub predictions: Vec<Option<Verdict>>,
}

pub async fn evaluate_model_on_code_detailed(
    gateway: &Gateway,
    model: &ModelId,
    code: &SdohCode,
    dataset: &Dataset,
    max_in_flight: usize,
    policy: IndeterminatePolicy,
) -> Result<DetailedCell, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset(dataset.code_id.clone()));
    }
    let texts: Vec<String> = dataset.examples.iter().map(|e| e.text().to_string()).collect();
    let results = gateway
        .batch_classify(model, code, &texts, max_in_flight)
        .await?;

    let mut verdicts = Vec::with_capacity(results.len());
    let mut truths = Vec::with_capacity(results.len());
    let mut predictions = Vec::with_capacity(results.len());
    let mut n_errors = 0;
    for (result, ex) in results.into_iter().zip(&dataset.examples) {
        match result {
            Ok(label) => {
                verdicts.push(label.verdict);
                truths.push(ex.label());
                predictions.push(Some(label.verdict));
            }
            Err(e) => {
                tracing::warn!(%model, code = %code.code_id, error = %e, "item not scorable");
                n_errors += 1;
                predictions.push(None);
            }
        }
    }
    let confusion = score(&verdicts, &truths, policy)?;
    Ok(DetailedCell {
        cell: EvalCell::new(
            model.clone(),
            code.code_id.clone(),
            confusion,
            n_errors,
            dataset.fingerprint(),
        ),
        predictions,
    })
}

pub async fn evaluate_model_on_code(
    gateway: &Gateway,
    model: &ModelId,
    code: &SdohCode,
    dataset: &Dataset,
    max_in_flight: usize,
    policy: IndeterminatePolicy,
) -> Result<EvalCell, EvalError> {
    evaluate_model_on_code_detailed(gateway, model, code, dataset, max_in_flight, policy)
        .await
        .map(|d| d.cell)
}

/// Evaluate every model on every code. Cells are run one after another.
pub async fn evaluate_all(
    gateway: &Gateway,
    models: &[ModelId],
    codes: &[SdohCode],
    datasets: &BTreeMap<String, Dataset>,
    max_in_flight: usize,
    policy: IndeterminatePolicy,
) -> Result<EvalMatrix, EvalError> {
    for code in codes {
        if !datasets.contains_key(&code.code_id) {
            return Err(EvalError::MissingDataset(code.code_id.clone()));
        }
    }
    let mut matrix = EvalMatrix::new();
    for code in codes {
        let dataset = &datasets[&code.code_id];
        for model in models {
            let cell =
                evaluate_model_on_code(gateway, model, code, dataset, max_in_flight, policy).await?;
            matrix.insert(cell)?;
        }
    }
    Ok(matrix)
}

/// Every integer confusion matrix with `n_pos` positives and `n_neg`
/// negatives whose accuracy and F1 are both within `tol` of the given values.
pub fn feasibility_search(
    accuracy: f64,
    f1: f64,
    n_pos: u64,
    n_neg: u64,
    tol: f64,
) -> Vec<ConfusionMatrix> {
    let mut out = Vec::new();
    for tp in 0..=n_pos {
        for fp in 0..=n_neg {
            let c = ConfusionMatrix::new(tp, n_neg - fp, fp, n_pos - tp);
            let Ok(m) = metrics(&c) else { continue };
            let Some(f) = m.f1 else { continue };
            if (m.accuracy - accuracy).abs() <= tol && (f - f1).abs() <= tol {
                out.push(c);
            }
        }
    }
    out
}
