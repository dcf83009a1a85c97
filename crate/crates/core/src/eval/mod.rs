//! Embedding-space evaluation: k-NN classification, the four quality
//! metrics with multi-seed confidence intervals, PCA projection, and the
//! (embedding size x k x seed) sweep driver.

mod knn;
mod metrics;
mod pca;
mod sweep;

pub use knn::knn_classify;
pub use metrics::{aggregate_seeds, compute_metrics, MetricsReport, MetricsRow};
pub use pca::pca_project;
pub use sweep::{sweep, SweepGrid, SweepRow};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Test,
}

impl SplitTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        }
    }
}

/// Where an embedding set came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub seed: u64,
    pub embedding_dim: usize,
}

/// A matrix of embeddings with aligned labels.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub embeddings: Array2<f64>,
    pub labels: Vec<usize>,
    pub split: SplitTag,
    pub provenance: Provenance,
}

impl EmbeddingSet {
    pub fn new(
        embeddings: Array2<f64>,
        labels: Vec<usize>,
        split: SplitTag,
        provenance: Provenance,
    ) -> Result<Self> {
        let (n, _) = embeddings.dim();
        if n == 0 {
            return Err(Error::RejectedInput("embedding set must be non-empty".into()));
        }
        if labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} embeddings but {} labels",
                labels.len()
            )));
        }
        if embeddings.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding set contains NaN/Inf".into()));
        }
        Ok(Self { embeddings, labels, split, provenance })
    }

    pub fn len(&self) -> usize {
        self.embeddings.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim().1
    }
}
