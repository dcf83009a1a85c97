//! Multi-view fusion: combine surface-view and section-view models either
//! by concatenating embeddings or by stacking penultimate feature maps and
//! max-pooling, then train a softmax classifier head on the fused features
//! while both extractors stay frozen.

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ClassLabel, PatchRecord};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, MetricsRow};
use crate::losses::cross_entropy_with_grad;
use crate::models::{StudentModel, TrainingMeta};
use crate::nn::{Adam, Linear};
use crate::training::MAX_EPOCHS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    Concat,
    StackMaxpool,
}

impl FusionStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            FusionStrategy::Concat => "concat",
            FusionStrategy::StackMaxpool => "stack_maxpool",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(FusionStrategy::Concat),
            "stack_maxpool" => Ok(FusionStrategy::StackMaxpool),
            other => Err(Error::Config(format!("unknown fusion strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FusionConfig {
    pub strategy: FusionStrategy,
    pub epochs: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { strategy: FusionStrategy::Concat, epochs: 10, learning_rate: 1e-3, seed: 0 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.epochs > MAX_EPOCHS {
            return Err(Error::Config(format!(
                "fusion epochs must be in [1, {MAX_EPOCHS}], got {}",
                self.epochs
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One surface/section patch pair sharing a class.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub surface_patch: PatchRecord,
    pub section_patch: PatchRecord,
    pub label: ClassLabel,
}

impl PairedSample {
    pub fn new(surface_patch: PatchRecord, section_patch: PatchRecord) -> Result<Self> {
        if surface_patch.label != section_patch.label {
            return Err(Error::RejectedInput(format!(
                "paired patches disagree on class: {} vs {}",
                surface_patch.label.name, section_patch.label.name
            )));
        }
        let label = surface_patch.label.clone();
        Ok(Self { surface_patch, section_patch, label })
    }
}

/// Pair every surface patch with a seeded random same-class section patch.
pub fn pair_views(
    surface: &[PatchRecord],
    section: &[PatchRecord],
    seed: u64,
) -> Result<Vec<PairedSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(surface.len());
    for s in surface {
        let mates: Vec<&PatchRecord> =
            section.iter().filter(|p| p.label == s.label).collect();
        if mates.is_empty() {
            return Err(Error::Sampling(format!(
                "no section patch available for class {}",
                s.label.name
            )));
        }
        let mate = mates[rng.gen_range(0..mates.len())];
        pairs.push(PairedSample::new(s.clone(), mate.clone())?);
    }
    Ok(pairs)
}

/// Strategy 1: concatenate the two view embeddings.
pub fn fuse_concat(surface_emb: &[f64], section_emb: &[f64]) -> Result<Vec<f64>> {
    if surface_emb.iter().chain(section_emb).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fusion inputs must be finite".into()));
    }
    let mut out = Vec::with_capacity(surface_emb.len() + section_emb.len());
    out.extend_from_slice(surface_emb);
    out.extend_from_slice(section_emb);
    Ok(out)
}

/// Strategy 2: stack the two `(H, W, C)` feature maps along a view axis,
/// take the elementwise max over the views, then the max over channels,
/// yielding one `(H, W, 1)` map returned flattened in row-major order.
pub fn fuse_stack_maxpool(
    surface_feat: &Array3<f32>,
    section_feat: &Array3<f32>,
) -> Result<Vec<f32>> {
    if surface_feat.dim() != section_feat.dim() {
        return Err(Error::ShapeMismatch(format!(
            "view feature shapes differ: {:?} vs {:?}",
            surface_feat.dim(),
            section_feat.dim()
        )));
    }
    let (h, w, c) = surface_feat.dim();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut m = f32::NEG_INFINITY;
            for ch in 0..c {
                m = m.max(surface_feat[[y, x, ch]].max(section_feat[[y, x, ch]]));
            }
            out.push(m);
        }
    }
    Ok(out)
}

/// A trained fusion head with its held-out metrics.
#[derive(Debug)]
pub struct FusionRun {
    pub head: Linear,
    pub input_dim: usize,
    pub n_classes: usize,
    pub meta: TrainingMeta,
    pub metrics: MetricsRow,
}

fn fused_features(
    pairs: &[PairedSample],
    surface_model: &StudentModel,
    section_model: &StudentModel,
    strategy: FusionStrategy,
) -> Result<Vec<Vec<f32>>> {
    pairs
        .iter()
        .map(|p| match strategy {
            FusionStrategy::Concat => {
                let (s, _) = surface_model.forward(&p.surface_patch)?;
                let (c, _) = section_model.forward(&p.section_patch)?;
                let mut out = s;
                out.extend_from_slice(&c);
                Ok(out)
            }
            FusionStrategy::StackMaxpool => fuse_stack_maxpool(
                &surface_model.penultimate_features(&p.surface_patch)?,
                &section_model.penultimate_features(&p.section_patch)?,
            ),
        })
        .collect()
}

/// Train a softmax classifier head on fused features; the per-view
/// extractors are taken by shared reference and never updated.
pub fn train_fusion(
    train_pairs: &[PairedSample],
    test_pairs: &[PairedSample],
    surface_model: &StudentModel,
    section_model: &StudentModel,
    cfg: &FusionConfig,
) -> Result<FusionRun> {
    cfg.validate()?;
    if train_pairs.is_empty() || test_pairs.is_empty() {
        return Err(Error::RejectedInput("fusion needs non-empty train and test pairs".into()));
    }
    let n_classes = train_pairs
        .iter()
        .chain(test_pairs)
        .map(|p| p.label.index + 1)
        .max()
        .unwrap();
    let train_x = fused_features(train_pairs, surface_model, section_model, cfg.strategy)?;
    let test_x = fused_features(test_pairs, surface_model, section_model, cfg.strategy)?;
    let input_dim = train_x[0].len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = Linear::new(input_dim, n_classes, &mut rng);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut curve = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(32) {
            for p in head.params_mut() {
                p.grad.fill(0.0);
            }
            for &i in chunk {
                let logits: Vec<f64> =
                    head.forward(&train_x[i]).iter().map(|&v| v as f64).collect();
                let (loss, grad) = cross_entropy_with_grad(&logits, train_pairs[i].label.index)?;
                epoch_loss += loss;
                let grad32: Vec<f32> = grad.iter().map(|&g| g as f32).collect();
                head.backward(&train_x[i], &grad32);
            }
            opt.step(&mut head.params_mut());
        }
        if !epoch_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "fusion loss became {epoch_loss} at epoch {epoch}"
            )));
        }
        curve.push((epoch, epoch_loss));
    }

    let argmax = |v: &[f32]| -> usize {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap()
    };
    let predictions: Vec<usize> = test_x.iter().map(|x| argmax(&head.forward(x))).collect();
    let truth: Vec<usize> = test_pairs.iter().map(|p| p.label.index).collect();
    let metrics = compute_metrics(&truth, &predictions, n_classes)?;
    Ok(FusionRun {
        head,
        input_dim,
        n_classes,
        meta: TrainingMeta { seed: cfg.seed, epochs_run: cfg.epochs, loss_curve: curve },
        metrics,
    })
}
