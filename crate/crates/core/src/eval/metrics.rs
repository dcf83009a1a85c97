//! Accuracy, precision, recall and F1 with support-weighted averaging, and
//! multi-seed aggregation with Student-t confidence intervals.
//!
//! Support-weighted recall is algebraically equal to accuracy; the
//! aggregation asserts that identity on every row it sees.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// One evaluation's worth of metrics, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricsRow {
    fn map2(&self, other: &MetricsRow, f: impl Fn(f64, f64) -> f64) -> MetricsRow {
        MetricsRow {
            accuracy: f(self.accuracy, other.accuracy),
            precision: f(self.precision, other.precision),
            recall: f(self.recall, other.recall),
            f1: f(self.f1, other.f1),
        }
    }
}

/// Multi-seed summary for one (k, embedding size) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean: MetricsRow,
    pub ci95_halfwidth: MetricsRow,
    pub per_seed: Vec<MetricsRow>,
    pub k: usize,
    pub embedding_dim: usize,
}

/// Confusion-matrix metrics: accuracy plus support-weighted precision,
/// recall and F1.
pub fn compute_metrics(
    true_labels: &[usize],
    predicted_labels: &[usize],
    n_classes: usize,
) -> Result<MetricsRow> {
    if true_labels.is_empty() || true_labels.len() != predicted_labels.len() {
        return Err(Error::RejectedInput(format!(
            "label vectors must be equal non-zero length, got {} and {}",
            true_labels.len(),
            predicted_labels.len()
        )));
    }
    for &l in true_labels.iter().chain(predicted_labels) {
        if l >= n_classes {
            return Err(Error::RejectedInput(format!(
                "label {l} outside [0, {n_classes})"
            )));
        }
    }
    let n = true_labels.len();
    // confusion[t][p] = count of samples with true class t predicted as p
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in true_labels.iter().zip(predicted_labels) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / n as f64;

    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for c in 0..n_classes {
        let support: usize = confusion[c].iter().sum();
        if support == 0 {
            continue;
        }
        let weight = support as f64 / n as f64;
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..n_classes).map(|t| confusion[t][c]).sum();
        let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let r = tp / support as f64;
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        precision += weight * p;
        recall += weight * r;
        f1 += weight * f;
    }
    Ok(MetricsRow { accuracy, precision, recall, f1 })
}

/// Mean and 95% Student-t confidence half-width across per-seed rows.
pub fn aggregate_seeds(
    per_seed: &[MetricsRow],
    k: usize,
    embedding_dim: usize,
) -> Result<MetricsReport> {
    let n = per_seed.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "confidence interval undefined for {n} seed(s); need at least 2"
        )));
    }
    let nf = n as f64;
    let zero = MetricsRow { accuracy: 0.0, precision: 0.0, recall: 0.0, f1: 0.0 };
    let sum = per_seed.iter().fold(zero, |acc, r| acc.map2(r, |a, b| a + b));
    let mean = sum.map2(&zero, |a, _| a / nf);
    // Sample variance with n-1 denominator.
    let var = per_seed
        .iter()
        .map(|r| r.map2(&mean, |x, m| (x - m) * (x - m)))
        .fold(zero, |acc, r| acc.map2(&r, |a, b| a + b))
        .map2(&zero, |a, _| a / (nf - 1.0));
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .map_err(|e| Error::Config(format!("t distribution: {e}")))?
        .inverse_cdf(0.975);
    let halfwidth = var.map2(&zero, |v, _| t * v.sqrt() / nf.sqrt());
    Ok(MetricsReport { mean, ci95_halfwidth: halfwidth, per_seed: per_seed.to_vec(), k, embedding_dim })
}
