//! Summaries of an evaluation matrix: the routed model per code, an optional
//! comparison against a baseline model, and the cross-code mean accuracy.
//!
//! The baseline is an ordinary model in the matrix. It is left out when the
//! router is trained so the comparison is routed-open-models vs. baseline.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::eval::{mean_defined, EvalMatrix};
use crate::gateway::ModelId;
use crate::router::{RouterError, RoutingTable};

pub const BEST_MODELS_CSV: &str = "best_models.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const SERIES_JSON: &str = "series.json";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("baseline model {0} is not in the evaluation matrix")]
    UnknownBaseline(String),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Encode { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestModelRow {
    pub code_id: String,
    pub model: ModelId,
    pub accuracy: f64,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub code_id: String,
    pub routed_model: ModelId,
    pub routed_accuracy: f64,
    pub routed_f1: Option<f64>,
    pub baseline_model: ModelId,
    pub baseline_accuracy: Option<f64>,
    pub baseline_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub matrix_fingerprint: String,
    pub n_codes: usize,
    /// Arithmetic mean of the routed models' accuracies over all codes.
    pub mean_accuracy: Option<f64>,
    pub mean_f1: Option<f64>,
    /// Codes left out of `mean_f1` because the routed model's F1 is undefined.
    pub f1_undefined: usize,
    pub baseline: Option<ModelId>,
    pub baseline_mean_accuracy: Option<f64>,
    pub baseline_mean_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Panel {
    pub metric: String,
    pub codes: Vec<String>,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub best: Vec<BestModelRow>,
    pub comparison: Option<Vec<ComparisonRow>>,
    pub summary: Summary,
}

impl Report {
    pub fn build(matrix: &EvalMatrix, baseline: Option<&ModelId>) -> Result<Self, ReportError> {
        let routed_matrix = match baseline {
            Some(b) if !matrix.models().contains(b) => {
                return Err(ReportError::UnknownBaseline(b.to_string()))
            }
            Some(b) => matrix.without_model(b),
            None => matrix.clone(),
        };
        let table = RoutingTable::train(&routed_matrix, "")?;
        let best: Vec<BestModelRow> = table
            .entries()
            .iter()
            .map(|(code_id, e)| BestModelRow {
                code_id: code_id.clone(),
                model: e.model.clone(),
                accuracy: e.training_accuracy,
                f1: e.training_f1,
            })
            .collect();

        let comparison = baseline.map(|b| {
            best.iter()
                .map(|row| {
                    let cell = matrix.cell(b, &row.code_id);
                    ComparisonRow {
                        code_id: row.code_id.clone(),
                        routed_model: row.model.clone(),
                        routed_accuracy: row.accuracy,
                        routed_f1: row.f1,
                        baseline_model: b.clone(),
                        baseline_accuracy: cell.and_then(|c| c.accuracy()),
                        baseline_f1: cell.and_then(|c| c.f1()),
                    }
                })
                .collect::<Vec<_>>()
        });

        let (mean_accuracy, _) = mean_defined(best.iter().map(|r| Some(r.accuracy)));
        let (mean_f1, f1_undefined) = mean_defined(best.iter().map(|r| r.f1));
        if f1_undefined > 0 {
            tracing::warn!(f1_undefined, "undefined F1 values left out of the mean");
        }
        let (baseline_mean_accuracy, baseline_mean_f1) = match &comparison {
            Some(rows) => (
                mean_defined(rows.iter().map(|r| r.baseline_accuracy)).0,
                mean_defined(rows.iter().map(|r| r.baseline_f1)).0,
            ),
            None => (None, None),
        };
        Ok(Report {
            summary: Summary {
                matrix_fingerprint: matrix.fingerprint(),
                n_codes: best.len(),
                mean_accuracy,
                mean_f1,
                f1_undefined,
                baseline: baseline.cloned(),
                baseline_mean_accuracy,
                baseline_mean_f1,
            },
            best,
            comparison,
        })
    }

    /// Accuracy and F1 panels, one series for the router and one for the baseline.
    pub fn series(&self) -> Vec<Panel> {
        let codes: Vec<String> = self.best.iter().map(|r| r.code_id.clone()).collect();
        let panel = |metric: &str, routed: Vec<Option<f64>>, base: Option<Vec<Option<f64>>>| {
            let mut series = vec![Series { name: "router".into(), values: routed }];
            if let (Some(values), Some(b)) = (base, &self.summary.baseline) {
                series.push(Series { name: b.to_string(), values });
            }
            Panel { metric: metric.into(), codes: codes.clone(), series }
        };
        let cmp = self.comparison.as_ref();
        vec![
            panel(
                "accuracy",
                self.best.iter().map(|r| Some(r.accuracy)).collect(),
                cmp.map(|rows| rows.iter().map(|r| r.baseline_accuracy).collect()),
            ),
            panel(
                "f1",
                self.best.iter().map(|r| r.f1).collect(),
                cmp.map(|rows| rows.iter().map(|r| r.baseline_f1).collect()),
            ),
        ]
    }

    /// Write the CSV tables, summary and plot series into `dir`.
    /// Returns the paths written.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
        fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.into(), source })?;
        let mut written = Vec::new();
        let path = dir.join(BEST_MODELS_CSV);
        write_csv(&path, &self.best)?;
        written.push(path);
        if let Some(rows) = &self.comparison {
            let path = dir.join(COMPARISON_CSV);
            write_csv(&path, rows)?;
            written.push(path);
        }
        let path = dir.join(SUMMARY_JSON);
        write_json(&path, &self.summary)?;
        written.push(path);
        let path = dir.join(SERIES_JSON);
        write_json(&path, &self.series())?;
        written.push(path);
        Ok(written)
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
    let encode = |e: csv::Error| ReportError::Encode { path: path.into(), message: e.to_string() };
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(encode)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Encode {
        path: path.into(),
        message: e.to_string(),
    })?;
    fs::write(path, bytes).map_err(|source| ReportError::Io { path: path.into(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ReportError::Encode {
        path: path.into(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| ReportError::Io { path: path.into(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{ConfusionMatrix, EvalCell};

    fn cell(model: &str, code: &str, correct: u64) -> EvalCell {
        let wrong = 1000 - correct;
        EvalCell::new(
            ModelId::new(model).unwrap(),
            code,
            ConfusionMatrix::new(333 - wrong / 2, correct - 333 + wrong / 2, wrong - wrong / 2, wrong / 2),
            0,
            format!("fp-{code}"),
        )
    }

    fn matrix(cells: impl IntoIterator<Item = EvalCell>) -> EvalMatrix {
        let mut m = EvalMatrix::new();
        for c in cells {
            m.insert(c).unwrap();
        }
        m
    }

    #[test]
    fn mean_of_routed_accuracies() {
        let routed = [("a", 990), ("b", 960), ("c", 947), ("d", 975), ("e", 998)];
        let m = matrix(routed.iter().flat_map(|&(code, acc)| [cell("best", code, acc), cell("other", code, acc - 10)]));
        let r = Report::build(&m, None).unwrap();
        let want = (0.99 + 0.96 + 0.947 + 0.975 + 0.998) / 5.0;
        assert!((r.summary.mean_accuracy.unwrap() - want).abs() < 1e-12);
        assert!((r.summary.mean_accuracy.unwrap() - 0.974).abs() < 1e-12);
        assert!(r.best.iter().all(|b| b.model.as_str() == "best"));
        assert!(r.comparison.is_none());
        assert_eq!(r.series()[0].series.len(), 1);
    }

    #[test]
    fn single_code_mean_is_identity() {
        let r = Report::build(&matrix([cell("m", "x", 937)]), None).unwrap();
        assert_eq!(r.summary.mean_accuracy, Some(0.937));
    }

    #[test]
    fn baseline_comparison() {
        let m = matrix([
            cell("open/a", "x", 990),
            cell("open/b", "x", 900),
            cell("gpt", "x", 995),
            cell("open/a", "y", 800),
            cell("open/b", "y", 950),
        ]);
        let gpt = ModelId::new("gpt").unwrap();
        let r = Report::build(&m, Some(&gpt)).unwrap();
        let rows = r.comparison.as_ref().unwrap();
        assert_eq!(rows[0].routed_model.as_str(), "open/a");
        assert_eq!(rows[0].baseline_accuracy, Some(0.995));
        assert_eq!(rows[1].routed_model.as_str(), "open/b");
        assert_eq!(rows[1].baseline_accuracy, None);
        assert_eq!(r.summary.baseline_mean_accuracy, Some(0.995));

        let missing = ModelId::new("nope").unwrap();
        assert!(matches!(Report::build(&m, Some(&missing)), Err(ReportError::UnknownBaseline(_))));

        let dir = tempfile::tempdir().unwrap();
        let files = r.write_to(dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let csv = fs::read_to_string(dir.path().join(COMPARISON_CSV)).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "code_id,routed_model,routed_accuracy,routed_f1,baseline_model,baseline_accuracy,baseline_f1");
        assert!(csv.lines().nth(2).unwrap().ends_with(",gpt,,"));
    }
}
