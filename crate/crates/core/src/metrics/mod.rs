//! Accuracy, per-class precision/recall/f1, mean f1 and the paired t-test.

mod tdist;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use tdist::{ln_gamma, regularized_incomplete_beta, student_t_cdf, student_t_quantile, student_t_two_tailed};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{predictions} predictions for {truth} ground-truth labels")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("t-test needs at least 2 pairs, got {0}")]
    TooFewSamples(usize),
    #[error("indicator {index} is {value}, expected 0 or 1")]
    InvalidIndicator { index: usize, value: u8 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Square confusion matrix, rows = truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Classes are the sorted union of `classes`, `truth` and `predictions`.
    pub fn build<S: AsRef<str>, T: AsRef<str>, U: AsRef<str>>(
        predictions: &[S],
        truth: &[T],
        classes: &[U],
    ) -> Result<Self, MetricsError> {
        if predictions.len() != truth.len() {
            return Err(MetricsError::LengthMismatch {
                predictions: predictions.len(),
                truth: truth.len(),
            });
        }
        if truth.is_empty() {
            return Err(MetricsError::EmptyTestSet);
        }
        let set: BTreeSet<&str> = classes
            .iter()
            .map(AsRef::as_ref)
            .chain(truth.iter().map(AsRef::as_ref))
            .chain(predictions.iter().map(AsRef::as_ref))
            .collect();
        let classes: Vec<String> = set.iter().map(|s| s.to_string()).collect();
        let pos: BTreeMap<&str, usize> = set.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
        for (p, t) in predictions.iter().zip(truth) {
            counts[pos[t.as_ref()]][pos[p.as_ref()]] += 1;
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// One-vs-rest counts for class index `k`.
    pub fn counts_for(&self, k: usize) -> ConfusionCounts {
        let tp = self.counts[k][k];
        let row: u64 = self.counts[k].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[k]).sum();
        let total = self.total();
        ConfusionCounts {
            tp,
            fp: col - tp,
            fn_: row - tp,
            tn: total + tp - row - col,
            total,
        }
    }
}

/// Binary one-vs-rest view of a class; `tp + fp + fn + tn = total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub counts: ConfusionCounts,
    /// Test samples whose truth is this class.
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No positive predictions; precision is scored 0.
    pub precision_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KelpScores {
    pub code: String,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total: u64,
    pub correct: u64,
    pub accuracy: f64,
    /// Average f1 over classes with nonzero support.
    pub mean_f1: f64,
    pub classes_in_test: usize,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub kelp: Option<KelpScores>,
}

impl MetricsReport {
    /// Copies the precision and recall of `code` into `kelp` (zeros if absent).
    pub fn with_kelp(mut self, code: &str) -> Self {
        let (precision, recall) = self.per_class.get(code).map_or((0.0, 0.0), |m| (m.precision, m.recall));
        self.kelp = Some(KelpScores {
            code: code.to_string(),
            precision,
            recall,
        });
        self
    }

    /// Row in the summary-table layout: accuracy and kelp scores as percentages.
    pub fn summary_row(&self, method: &str) -> SummaryRow {
        let (p, r) = self.kelp.as_ref().map_or((0.0, 0.0), |k| (k.precision, k.recall));
        SummaryRow {
            method: method.to_string(),
            accuracy_pct: 100.0 * self.accuracy,
            mean_f1: self.mean_f1,
            kelp_precision_pct: 100.0 * p,
            kelp_recall_pct: 100.0 * r,
        }
    }
}

pub fn evaluate<S: AsRef<str>, T: AsRef<str>, U: AsRef<str>>(
    predictions: &[S],
    truth: &[T],
    classes: &[U],
) -> Result<MetricsReport, MetricsError> {
    let cm = ConfusionMatrix::build(predictions, truth, classes)?;
    let total = cm.total();
    let correct: u64 = (0..cm.classes.len()).map(|k| cm.counts[k][k]).sum();
    let mut per_class = BTreeMap::new();
    let mut f1_sum = 0.0;
    let mut present = 0usize;
    for (k, class) in cm.classes.iter().enumerate() {
        let c = cm.counts_for(k);
        let support = c.tp + c.fn_;
        let predicted = c.tp + c.fp;
        let precision = if predicted == 0 { 0.0 } else { c.tp as f64 / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { c.tp as f64 / support as f64 };
        let f = f1(precision, recall);
        if support > 0 {
            f1_sum += f;
            present += 1;
        }
        per_class.insert(
            class.clone(),
            ClassMetrics {
                counts: c,
                support,
                precision,
                recall,
                f1: f,
                precision_undefined: predicted == 0,
            },
        );
    }
    Ok(MetricsReport {
        total,
        correct,
        accuracy: correct as f64 / total as f64,
        mean_f1: f1_sum / present as f64,
        classes_in_test: present,
        per_class,
        kelp: None,
    })
}

/// One line of the method comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    #[serde(rename = "Method")]
    pub method: String,
    #[serde(rename = "Accuracy (%)")]
    pub accuracy_pct: f64,
    #[serde(rename = "Mean f1-score")]
    pub mean_f1: f64,
    #[serde(rename = "Precision of Kelps (%)")]
    pub kelp_precision_pct: f64,
    #[serde(rename = "Recall of Kelps (%)")]
    pub kelp_recall_pct: f64,
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json(report: &MetricsReport, path: &Path) -> Result<(), MetricsError> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TTestFlag {
    /// Every difference is zero: t = 0, p = 1.
    AllDifferencesZero,
    /// Nonzero constant difference: |t| = ∞, p = 0.
    ConstantDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub n: usize,
    pub mean_difference: f64,
    pub t_statistic: f64,
    pub p_value: f64,
    pub degrees_of_freedom: f64,
    pub flag: Option<TTestFlag>,
}

/// Paired t-test on 0/1 correctness indicators, d = a − b.
pub fn paired_t_test(correct_a: &[u8], correct_b: &[u8]) -> Result<TTestResult, MetricsError> {
    if correct_a.len() != correct_b.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: correct_a.len(),
            truth: correct_b.len(),
        });
    }
    for (index, &value) in correct_a.iter().chain(correct_b).enumerate() {
        if value > 1 {
            return Err(MetricsError::InvalidIndicator {
                index: index % correct_a.len(),
                value,
            });
        }
    }
    let d: Vec<f64> = correct_a
        .iter()
        .zip(correct_b)
        .map(|(&a, &b)| f64::from(a) - f64::from(b))
        .collect();
    t_test_differences(&d)
}

/// One-sample two-tailed t-test of mean(d) = 0.
pub fn t_test_differences(d: &[f64]) -> Result<TTestResult, MetricsError> {
    let n = d.len();
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    let nf = n as f64;
    let df = nf - 1.0;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / df;
    let result = |t: f64, p: f64, flag| TTestResult {
        n,
        mean_difference: mean,
        t_statistic: t,
        p_value: p,
        degrees_of_freedom: df,
        flag,
    };
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            result(0.0, 1.0, Some(TTestFlag::AllDifferencesZero))
        } else {
            result(mean.signum() * f64::INFINITY, 0.0, Some(TTestFlag::ConstantDifference))
        });
    }
    let t = mean / (var.sqrt() / nf.sqrt());
    Ok(result(t, student_t_two_tailed(t, df), None))
}
