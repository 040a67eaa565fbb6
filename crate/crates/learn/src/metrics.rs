//! One-vs-rest per-label accuracy, precision, recall and F1, in percent.

use crate::error::{LearnError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LabelMetrics {
    pub label: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub per_label: Vec<LabelMetrics>,
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
}

impl Evaluation {
    pub fn label(&self, label: usize) -> &LabelMetrics {
        &self.per_label[label]
    }

    /// Mean F1 over `labels`.
    pub fn mean_f1(&self, labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        labels.iter().map(|&l| self.per_label[l].f1).sum::<f64>() / labels.len() as f64
    }
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

pub fn evaluate(predicted: &[usize], actual: &[usize], classes: usize) -> Result<Evaluation> {
    if predicted.len() != actual.len() {
        return Err(LearnError::Input(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &a) in predicted.iter().zip(actual) {
        if p >= classes || a >= classes {
            return Err(LearnError::Input(format!("label out of range: {a} / {p}")));
        }
        confusion[a][p] += 1;
    }
    let n = actual.len();
    let per_label = (0..classes)
        .map(|k| {
            let tp = confusion[k][k];
            let actual_k: usize = confusion[k].iter().sum();
            let predicted_k: usize = confusion.iter().map(|row| row[k]).sum();
            let fp = predicted_k - tp;
            let fn_ = actual_k - tp;
            let tn = n - tp - fp - fn_;
            let precision = pct(tp, predicted_k);
            let recall = pct(tp, actual_k);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            LabelMetrics {
                label: k,
                accuracy: pct(tp + tn, n),
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let correct = (0..classes).map(|k| confusion[k][k]).sum();
    Ok(Evaluation {
        per_label,
        confusion,
        accuracy: pct(correct, n),
    })
}
