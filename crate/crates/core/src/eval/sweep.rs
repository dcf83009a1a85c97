//! Grid sweep driver: one trained embedding space per (dimension, seed),
//! evaluated at every k, aggregated across seeds.

use serde::{Deserialize, Serialize};

use super::{aggregate_seeds, compute_metrics, knn_classify, EmbeddingSet, MetricsReport, MetricsRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepGrid {
    pub embedding_dims: Vec<usize>,
    pub k_values: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dims.is_empty() || self.k_values.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep grid must be non-empty in every axis".into()));
        }
        Ok(())
    }
}

/// One (embedding size, k) cell of the sweep result table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub embedding_dim: usize,
    pub k: usize,
    pub report: MetricsReport,
}

/// Run `train_fn(dim, seed)` once per grid point to obtain train/test
/// embedding sets, evaluate every k on them, and aggregate across seeds.
pub fn sweep<F>(mut train_fn: F, grid: &SweepGrid) -> Result<Vec<SweepRow>>
where
    F: FnMut(usize, u64) -> Result<(EmbeddingSet, EmbeddingSet)>,
{
    grid.validate()?;
    let mut rows = Vec::new();
    for &dim in &grid.embedding_dims {
        // per_k[i][s] = metrics for k_values[i] under seed s
        let mut per_k: Vec<Vec<MetricsRow>> = vec![Vec::new(); grid.k_values.len()];
        for &seed in &grid.seeds {
            let (train, test) = train_fn(dim, seed)?;
            let n_classes = train
                .labels
                .iter()
                .chain(&test.labels)
                .max()
                .map(|&m| m + 1)
                .unwrap_or(0);
            for (i, &k) in grid.k_values.iter().enumerate() {
                let predictions = knn_classify(&train, &test, k)?;
                per_k[i].push(compute_metrics(&test.labels, &predictions, n_classes)?);
            }
        }
        for (i, &k) in grid.k_values.iter().enumerate() {
            let report = if per_k[i].len() >= 2 {
                aggregate_seeds(&per_k[i], k, dim)?
            } else {
                // Single seed: no confidence interval, report the row as-is.
                MetricsReport {
                    mean: per_k[i][0],
                    ci95_halfwidth: MetricsRow {
                        accuracy: f64::NAN,
                        precision: f64::NAN,
                        recall: f64::NAN,
                        f1: f64::NAN,
                    },
                    per_seed: per_k[i].clone(),
                    k,
                    embedding_dim: dim,
                }
            };
            rows.push(SweepRow { embedding_dim: dim, k, report });
        }
    }
    Ok(rows)
}
