//! Euclidean k-NN with uniform votes.
//!
//! `k` is clamped to the training-set size. Vote ties are broken by the
//! class of the nearest neighbor among the tied classes; distance ties are
//! broken by training index, so predictions are fully deterministic.

use super::EmbeddingSet;
use crate::error::{Error, Result};

/// Predict a class index for every row of `test`.
pub fn knn_classify(train: &EmbeddingSet, test: &EmbeddingSet, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if train.dim() != test.dim() {
        return Err(Error::ShapeMismatch(format!(
            "train dim {} vs test dim {}",
            train.dim(),
            test.dim()
        )));
    }
    let n_train = train.len();
    let k_eff = k.min(n_train);
    let mut predictions = Vec::with_capacity(test.len());
    for q in test.embeddings.rows() {
        let mut dist_idx: Vec<(f64, usize)> = train
            .embeddings
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let d2: f64 = q.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        // Partial selection of the k nearest, then order them.
        if k_eff < n_train {
            dist_idx.select_nth_unstable_by(k_eff - 1, |a, b| {
                a.partial_cmp(b).expect("finite distances")
            });
            dist_idx.truncate(k_eff);
        }
        dist_idx.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        predictions.push(vote(&dist_idx, &train.labels));
    }
    Ok(predictions)
}

/// Uniform vote over the ordered neighbor list; `neighbors` must be sorted
/// by (distance, index) ascending.
pub(crate) fn vote(neighbors: &[(f64, usize)], labels: &[usize]) -> usize {
    let max_class = neighbors.iter().map(|&(_, i)| labels[i]).max().unwrap_or(0);
    let mut counts = vec![0usize; max_class + 1];
    for &(_, i) in neighbors {
        counts[labels[i]] += 1;
    }
    let best = *counts.iter().max().expect("non-empty neighbor list");
    // Among tied classes, the class of the nearest neighbor wins.
    neighbors
        .iter()
        .map(|&(_, i)| labels[i])
        .find(|&c| counts[c] == best)
        .expect("some class attains the max vote")
}
