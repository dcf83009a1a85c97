//! Teacher-guided deep metric learning toolkit.
//!
//! Pipeline: labeled images are cut into whitened patches and split without
//! source leakage; a multi-stream teacher is trained with a coupled
//! local/global triplet loss; a residual student is distilled from the
//! frozen teacher with a hybrid distance + cross-entropy loss; embedding
//! spaces are evaluated with k-NN classification and fused across views.

pub mod commands;
pub mod data;
pub mod error;
pub mod manifest;
pub mod eval;
pub mod fusion;
pub mod losses;
pub mod models;
pub mod nn;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
