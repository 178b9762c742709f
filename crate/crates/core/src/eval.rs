//! Evaluation metrics: accuracy, per-class precision/recall/F1, confusion
//! matrices, categorical cross-entropy, and cross-validation averaging.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Per-class metrics. When a class receives zero predicted positives its
/// precision is reported as 0 with `precision_defined = false` (rather than
/// NaN); likewise for recall with zero support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub precision_defined: bool,
    pub recall_defined: bool,
}

/// Full evaluation report for one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Count matrix, rows = true class, columns = predicted class.
    pub confusion: Vec<Vec<usize>>,
    /// Class labels in index order (confusion axes).
    pub labels: Vec<String>,
    pub n_samples: usize,
}

impl EvalReport {
    /// Renders the confusion matrix as CSV with the row label in the first
    /// column and predicted-class labels as the header.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("label");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            let _ = write!(out, "{}", self.labels[i]);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Computes accuracy, per-class precision/recall/F1, and the confusion
/// matrix. `labels` supplies the class-name axis; predictions and truths are
/// 0-based indices into it.
pub fn evaluate(y_true: &[usize], y_pred: &[usize], labels: &[String]) -> Result<EvalReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Data(format!(
            "y_true has {} entries, y_pred has {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Data("cannot evaluate zero samples".into()));
    }
    let c = labels.len();
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&v| v >= c) {
        return Err(Error::Data(format!(
            "class index {bad} outside label set of size {c}"
        )));
    }

    let mut confusion = vec![vec![0usize; c]; c];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t][p] += 1;
    }

    let n = y_true.len();
    let trace: usize = (0..c).map(|i| confusion[i][i]).sum();
    let accuracy = trace as f64 / n as f64;
    // Same quantity via the per-sample indicator mean (Eq. 5 form); the two
    // must agree bit-for-bit.
    let indicator_mean = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| if t == p { 1.0 } else { 0.0 })
        .sum::<f64>()
        / n as f64;
    debug_assert_eq!(accuracy.to_bits(), indicator_mean.to_bits());

    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let tp = confusion[k][k];
        let predicted: usize = (0..c).map(|i| confusion[i][k]).sum();
        let support: usize = confusion[k].iter().sum();
        let precision_defined = predicted > 0;
        let recall_defined = support > 0;
        let precision = if precision_defined {
            tp as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = if recall_defined {
            tp as f64 / support as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics {
            label: labels[k].clone(),
            precision,
            recall,
            f1,
            support,
            precision_defined,
            recall_defined,
        });
    }

    Ok(EvalReport {
        accuracy,
        per_class,
        confusion,
        labels: labels.to_vec(),
        n_samples: n,
    })
}

/// Mean categorical cross-entropy: `mean(-ln p[true])` with probabilities
/// clamped into `[1e-12, 1]`. Every row of `prob_rows` must sum to 1 within
/// `1e-6`.
pub fn cross_entropy(prob_rows: &ArrayView2<f64>, y_true: &[usize]) -> Result<f64> {
    let (n, c) = prob_rows.dim();
    if n != y_true.len() {
        return Err(Error::Data(format!(
            "probability matrix has {n} rows, y_true has {}",
            y_true.len()
        )));
    }
    if n == 0 {
        return Err(Error::Data("cannot compute loss on zero samples".into()));
    }
    let mut total = 0.0;
    for (i, &t) in y_true.iter().enumerate() {
        if t >= c {
            return Err(Error::Data(format!(
                "class index {t} outside {c} probability columns"
            )));
        }
        let row_sum: f64 = prob_rows.row(i).sum();
        if (row_sum - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!(
                "probability row {i} sums to {row_sum}, not 1"
            )));
        }
        let p = prob_rows[[i, t]].clamp(1e-12, 1.0);
        total -= p.ln();
    }
    Ok(total / n as f64)
}

/// Arithmetic mean of per-fold scores (cross-validation summary).
pub fn cv_mean(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Data("cv_mean of an empty score list".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
