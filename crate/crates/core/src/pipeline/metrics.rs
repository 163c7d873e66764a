use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Per-class F1 averaged with weights `support_c / total`.
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

/// Accuracy, weighted F1 and per-class scores. Precision, recall and F1 are
/// zero whenever their denominator is zero.
pub fn metrics_from_predictions(labels: &[String], truth: &[usize], predicted: &[usize]) -> Result<MetricsReport> {
    if truth.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("cannot compute metrics on an empty set"));
    }
    let n = labels.len();
    if let Some(&bad) = truth.iter().chain(predicted).find(|&&c| c >= n) {
        return Err(Error::invalid(format!("class index {bad} out of range for {n} labels")));
    }
    let mut confusion = vec![vec![0usize; n]; n];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let total = truth.len();
    let correct: usize = (0..n).map(|c| confusion[c][c]).sum();
    let mut per_class = Vec::with_capacity(n);
    let mut weighted_f1 = 0.0;
    for c in 0..n {
        let tp = confusion[c][c] as f64;
        let support: usize = confusion[c].iter().sum();
        let predicted_c: usize = confusion.iter().map(|row| row[c]).sum();
        let precision = if predicted_c > 0 { tp / predicted_c as f64 } else { 0.0 };
        let recall = if support > 0 { tp / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        weighted_f1 += support as f64 / total as f64 * f1;
        per_class.push(ClassMetrics {
            label: labels[c].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    Ok(MetricsReport {
        accuracy: correct as f64 / total as f64,
        weighted_f1,
        per_class,
        confusion,
        total,
    })
}
