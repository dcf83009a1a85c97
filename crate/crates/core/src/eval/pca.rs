//! PCA projection to a low-dimensional view with a deterministic sign
//! convention.

use nalgebra::DMatrix;
use ndarray::Array2;

use super::EmbeddingSet;
use crate::error::{Error, Result};

/// Project onto the top `out_dim` principal components of the mean-centered
/// data. Returns the projected points and the explained-variance ratio of
/// each kept component. Each component's largest-magnitude loading is made
/// positive so the projection is reproducible.
pub fn pca_project(set: &EmbeddingSet, out_dim: usize) -> Result<(Array2<f64>, Vec<f64>)> {
    let (n, d) = set.embeddings.dim();
    if n < out_dim {
        return Err(Error::RejectedInput(format!(
            "PCA needs at least {out_dim} points, got {n}"
        )));
    }
    if out_dim == 0 || out_dim > d {
        return Err(Error::Config(format!(
            "out_dim {out_dim} must be in [1, {d}]"
        )));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| set.embeddings.column(j).sum() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, d, |i, j| set.embeddings[[i, j]] - mean[j]);
    let cov = centered.transpose() * &centered; // scaled covariance; ratios unaffected
    let eig = cov.symmetric_eigen();

    // Order components by descending eigenvalue, index as tiebreak.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let total: f64 = eig.eigenvalues.iter().map(|&v| v.max(0.0)).sum();
    let mut projection = Array2::<f64>::zeros((n, out_dim));
    let mut ratios = Vec::with_capacity(out_dim);
    for (k, &col) in order.iter().take(out_dim).enumerate() {
        let mut axis: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        // Sign convention: largest-magnitude loading positive.
        let lead = axis
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap().then(b.0.cmp(&a.0)))
            .map(|(_, &v)| v)
            .unwrap_or(1.0);
        if lead < 0.0 {
            for v in &mut axis {
                *v = -*v;
            }
        }
        for i in 0..n {
            projection[[i, k]] = (0..d).map(|j| centered[(i, j)] * axis[j]).sum();
        }
        ratios.push(if total > 0.0 { eig.eigenvalues[col].max(0.0) / total } else { 0.0 });
    }
    Ok((projection, ratios))
}
