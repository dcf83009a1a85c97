//! Experiment manifest: one TOML file describes the dataset, model sizes,
//! loss settings, evaluation grid, and output directory for a full run.
//! Unknown keys are rejected so typos fail loudly instead of silently
//! falling back to defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{PatchOptions, SyntheticSpec, View};
use crate::error::{Error, Result};
use crate::training::MAX_EPOCHS;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub sweep: SweepSection,
    pub output: OutputSection,
}

/// Where patches come from: a directory tree of labeled images, or the
/// built-in synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DatasetSource,
    /// Image tree root, `<root>/<view>/<class>/*.png`; required for `tree`.
    pub path: Option<PathBuf>,
    #[serde(default = "default_view")]
    pub view: String,
    #[serde(default = "default_n_classes")]
    pub n_classes: usize,
    #[serde(default = "default_images_per_class")]
    pub images_per_class: usize,
    #[serde(default = "default_image_size")]
    pub image_size: [usize; 2],
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    #[serde(default = "default_max_overlap")]
    pub max_overlap: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic,
    Tree,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_width")]
    pub student_width: usize,
    #[serde(default = "default_hidden_dim")]
    pub teacher_hidden_dim: usize,
    #[serde(default = "default_stream_channels")]
    pub teacher_stream_channels: [usize; 2],
    #[serde(default = "default_downsample")]
    pub input_downsample: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            embedding_dim: default_embedding_dim(),
            student_width: default_width(),
            teacher_hidden_dim: default_hidden_dim(),
            teacher_stream_channels: default_stream_channels(),
            input_downsample: default_downsample(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f32,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            beta: default_beta(),
            margin: default_margin(),
            gamma: default_gamma(),
            epochs: default_epochs(),
            learning_rate: default_lr(),
            batch_size: default_batch_size(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_dims")]
    pub embedding_dims: Vec<usize>,
    #[serde(default = "default_ks")]
    pub k_values: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { embedding_dims: default_dims(), k_values: default_ks(), seeds: default_seeds() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

fn default_view() -> String {
    "SUR".into()
}
fn default_n_classes() -> usize {
    6
}
fn default_images_per_class() -> usize {
    20
}
fn default_image_size() -> [usize; 2] {
    [512, 512]
}
fn default_patch_size() -> usize {
    256
}
fn default_max_overlap() -> usize {
    20
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_embedding_dim() -> usize {
    32
}
fn default_width() -> usize {
    12
}
fn default_hidden_dim() -> usize {
    64
}
fn default_stream_channels() -> [usize; 2] {
    [8, 16]
}
fn default_downsample() -> usize {
    16
}
fn default_beta() -> f64 {
    0.5
}
fn default_margin() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    0.5
}
fn default_epochs() -> usize {
    20
}
fn default_lr() -> f32 {
    1e-3
}
fn default_batch_size() -> usize {
    32
}
fn default_dims() -> Vec<usize> {
    vec![32]
}
fn default_ks() -> Vec<usize> {
    vec![5]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentManifest {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let manifest: ExperimentManifest = toml::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        View::parse(&d.view)?;
        if d.source == DatasetSource::Tree && d.path.is_none() {
            return Err(Error::Manifest("dataset.source = \"tree\" requires dataset.path".into()));
        }
        if d.n_classes < 2 {
            return Err(Error::Manifest("dataset.n_classes must be at least 2".into()));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::Manifest(format!(
                "dataset.train_fraction must be in (0, 1), got {}",
                d.train_fraction
            )));
        }
        if d.max_overlap >= d.patch_size {
            return Err(Error::Manifest(format!(
                "dataset.max_overlap {} must be smaller than patch_size {}",
                d.max_overlap, d.patch_size
            )));
        }
        if self.loss.epochs == 0 || self.loss.epochs > MAX_EPOCHS {
            return Err(Error::Manifest(format!(
                "loss.epochs must be in [1, {MAX_EPOCHS}], got {}",
                self.loss.epochs
            )));
        }
        if !(self.loss.beta >= 0.0 && self.loss.beta <= 1.0) {
            return Err(Error::Manifest(format!("loss.beta must be in [0, 1], got {}", self.loss.beta)));
        }
        if !(self.loss.gamma > 0.0 && self.loss.gamma < 1.0) {
            return Err(Error::Manifest(format!(
                "loss.gamma must be in (0, 1), got {}",
                self.loss.gamma
            )));
        }
        if self.sweep.embedding_dims.is_empty()
            || self.sweep.k_values.is_empty()
            || self.sweep.seeds.is_empty()
        {
            return Err(Error::Manifest("sweep axes must all be non-empty".into()));
        }
        Ok(())
    }

    pub fn view(&self) -> View {
        View::parse(&self.dataset.view).expect("validated")
    }

    pub fn patch_options(&self) -> PatchOptions {
        PatchOptions {
            patch_size: self.dataset.patch_size,
            max_overlap: self.dataset.max_overlap,
            mask_threshold: 0.5,
        }
    }

    pub fn synthetic_spec(&self, view: View) -> SyntheticSpec {
        SyntheticSpec {
            n_classes: self.dataset.n_classes,
            images_per_class: self.dataset.images_per_class,
            image_size: (self.dataset.image_size[0], self.dataset.image_size[1]),
            seed: self.dataset.seed,
            view,
        }
    }
}
