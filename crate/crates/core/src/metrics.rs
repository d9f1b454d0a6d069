//! Evaluation metrics: confusion matrix, per-class recall (MCR/FCR for
//! the 2-class gender task), total accuracy, and exact / one-off accuracy
//! for ordinal age groups.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;


use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    /// K x K counts, rows = truth, columns = prediction.
    pub confusion: Vec<usize>,
    /// Per-class recall in [0,1]; NaN-free (classes absent from the eval
    /// set report recall 0).
    pub per_class_recall: Vec<f64>,
    /// trace / sample count.
    pub accuracy: f64,
    pub exact: Option<f64>,
    pub one_off: Option<f64>,
    pub samples: usize,
}

impl MetricsReport {
    /// Build from per-sample (truth, prediction) class indices. With
    /// `ordinal` the class order is taken as the group order and one-off
    /// accuracy counts |pred - truth| <= 1 as correct.
    pub fn from_predictions(
        truth: &[usize],
        pred: &[usize],
        class_names: &[String],
        ordinal: bool,
    ) -> Result<Self> {
        let k = class_names.len();
        if truth.is_empty() || truth.len() != pred.len() {
            return Err(Error::Invalid("metrics: empty or mismatched prediction lists".into()));
        }
        if truth.iter().chain(pred.iter()).any(|&i| i >= k) {
            return Err(Error::Invalid("metrics: class index out of range".into()));
        }
        let mut confusion = vec![0usize; k * k];
        for (&t, &p) in truth.iter().zip(pred.iter()) {
            confusion[t * k + p] += 1;
        }
        let samples = truth.len();
        let trace: usize = (0..k).map(|i| confusion[i * k + i]).sum();
        let per_class_recall = (0..k)
            .map(|i| {
                let row: usize = confusion[i * k..(i + 1) * k].iter().sum();
                if row == 0 {
                    0.0
                } else {
                    confusion[i * k + i] as f64 / row as f64
                }
            })
            .collect();
        let (exact, one_off) = if ordinal {
            let within: usize = truth
                .iter()
                .zip(pred.iter())
                .filter(|(&t, &p)| t.abs_diff(p) <= 1)
                .count();
            (Some(trace as f64 / samples as f64), Some(within as f64 / samples as f64))
        } else {
            (None, None)
        };
        Ok(MetricsReport {
            class_names: class_names.to_vec(),
            confusion,
            per_class_recall,
            accuracy: trace as f64 / samples as f64,
            exact,
            one_off,
            samples,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax<T: crate::Float>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean and population (n-divisor) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// "51.63 ± 3.66"-style aggregate over per-fold percentages.
pub fn format_mean_std(values: &[f64]) -> String {
    let (m, s) = mean_std(values);
    format!("{m:.2} \u{b1} {s:.2}")
}
