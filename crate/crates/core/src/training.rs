//! Training orchestration: teacher runs with the coupled triplet loss,
//! offline distillation targets from the frozen teacher, student runs with
//! the hybrid loss, and the two baseline trainers.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetSplit, PatchRecord};
use crate::error::{Error, Result};
use crate::eval::{EmbeddingSet, Provenance, SplitTag};
use crate::losses::{
    contrastive_loss_with_grad, gemini_loss_with_grad, hybrid_loss_with_grad,
    triplet_margin_loss_with_grad, ContrastivePair, GeminiItem, GeminiLossParams, HybridItem,
    HybridLossParams, TripletItem,
};
use crate::models::{StudentConfig, StudentModel, TeacherConfig, TeacherModel, TrainingMeta};
use crate::nn::{to_f32, to_f64, Adam};
use crate::sampling::{batch_triplets, make_pairs, make_triplets, mine_semi_hard};

/// Hard epoch budget shared by every trainer.
pub const MAX_EPOCHS: usize = 60;

/// Run-level knobs common to all trainers.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: 0, epochs: 20, learning_rate: 1e-3, batch_size: 32 }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.epochs > MAX_EPOCHS {
            return Err(Error::Config(format!(
                "epochs must be in [1, {MAX_EPOCHS}], got {}",
                self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// A finished teacher run.
#[derive(Debug)]
pub struct TeacherRun {
    pub model: TeacherModel,
    pub meta: TrainingMeta,
}

/// A finished student (or baseline) run. The hybrid trainer also records
/// the two loss components separately.
#[derive(Debug)]
pub struct StudentRun {
    pub model: StudentModel,
    pub meta: TrainingMeta,
    pub distance_curve: Vec<f64>,
    pub ce_curve: Vec<f64>,
}

/// Frozen-teacher embeddings for every training patch.
#[derive(Debug, Clone)]
pub struct DistillationTargets {
    pub targets: BTreeMap<String, Vec<f32>>,
    pub embedding_dim: usize,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn check_finite(loss: f64, what: &str, epoch: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "{what} loss became {loss} at epoch {epoch}; aborting run"
        )));
    }
    Ok(())
}

fn check_split(split: &DatasetSplit, n_classes: usize) -> Result<()> {
    if split.n_classes() < 2 {
        return Err(Error::Config("training split must contain at least 2 classes".into()));
    }
    if let Some(p) = split.train.iter().find(|p| p.label.index >= n_classes) {
        return Err(Error::Config(format!(
            "patch {} has class index {} outside the configured {n_classes} classes",
            p.patch_id, p.label.index
        )));
    }
    Ok(())
}

/// Train the multi-stream teacher on seeded uniform triplet batches.
pub fn train_teacher(
    split: &DatasetSplit,
    teacher_cfg: &TeacherConfig,
    loss_params: &GeminiLossParams,
    run_cfg: &RunConfig,
) -> Result<TeacherRun> {
    run_cfg.validate()?;
    loss_params.validate()?;
    check_split(split, teacher_cfg.n_classes)?;
    let mut model = TeacherModel::new(teacher_cfg.clone(), run_cfg.seed)?;
    let mut opt = Adam::new(run_cfg.learning_rate);
    let mut curve = Vec::new();
    let triplets_per_epoch = split.train.len().max(run_cfg.batch_size);

    for epoch in 0..run_cfg.epochs {
        let triplets =
            make_triplets(&split.train, triplets_per_epoch, epoch_seed(run_cfg.seed, epoch))?;
        let mut epoch_loss = 0.0;
        for batch in batch_triplets(triplets, run_cfg.batch_size) {
            model.zero_grad();
            let mut items = Vec::with_capacity(batch.triplets.len());
            let mut caches = Vec::with_capacity(batch.triplets.len());
            for t in &batch.triplets {
                let (k, l) = (t.anchor.label.index, t.negative.label.index);
                let (f_a, sc_a) = model.forward_local_cached(t.anchor, k)?;
                let (f_p, sc_p) = model.forward_local_cached(t.positive, k)?;
                let (f_n, sc_n) = model.forward_local_cached(t.negative, l)?;
                let (g_a, gc_a) = model.forward_global_cached(&f_a)?;
                let (g_p, gc_p) = model.forward_global_cached(&f_p)?;
                let (g_n, gc_n) = model.forward_global_cached(&f_n)?;
                items.push(GeminiItem {
                    f_anchor: to_f64(&f_a),
                    f_positive: to_f64(&f_p),
                    g_anchor: to_f64(&g_a),
                    g_positive: to_f64(&g_p),
                    g_negative: to_f64(&g_n),
                });
                caches.push((k, l, sc_a, sc_p, sc_n, gc_a, gc_p, gc_n));
            }
            let (loss, grads) = gemini_loss_with_grad(&items, loss_params)?;
            check_finite(loss, "teacher", epoch)?;
            epoch_loss += loss;
            for (grad, (k, l, sc_a, sc_p, sc_n, gc_a, gc_p, gc_n)) in
                grads.iter().zip(caches.iter())
            {
                // Each sample's intermediate receives the direct loss term
                // plus the contribution routed back through the shared head.
                let g_int_a = model.backward_global(gc_a, &to_f32(&grad.g_anchor));
                let g_int_p = model.backward_global(gc_p, &to_f32(&grad.g_positive));
                let g_int_n = model.backward_global(gc_n, &to_f32(&grad.g_negative));
                let add = |direct: &[f64], routed: &[f32]| -> Vec<f32> {
                    direct.iter().zip(routed).map(|(&d, &r)| d as f32 + r).collect()
                };
                model.backward_local(*k, sc_a, &add(&grad.f_anchor, &g_int_a));
                model.backward_local(*k, sc_p, &add(&grad.f_positive, &g_int_p));
                model.backward_local(*l, sc_n, &add(&vec![0.0; g_int_n.len()], &g_int_n));
            }
            opt.step(&mut model.params_mut());
        }
        curve.push((epoch, epoch_loss));
    }
    Ok(TeacherRun {
        model,
        meta: TrainingMeta { seed: run_cfg.seed, epochs_run: run_cfg.epochs, loss_curve: curve },
    })
}

/// Embed every training patch with the frozen teacher, routing each patch
/// through its own class's stream.
pub fn compute_distillation_targets(
    teacher: &TeacherModel,
    split: &DatasetSplit,
) -> Result<DistillationTargets> {
    let mut targets = BTreeMap::new();
    for patch in &split.train {
        if patch.label.index >= teacher.config.n_classes {
            return Err(Error::RejectedInput(format!(
                "patch {} has class index {} with no teacher stream",
                patch.patch_id, patch.label.index
            )));
        }
        targets.insert(patch.patch_id.clone(), teacher.embed(patch)?);
    }
    Ok(DistillationTargets { targets, embedding_dim: teacher.config.embedding_dim })
}

/// Distill the student against frozen teacher targets with the hybrid loss.
pub fn train_student(
    split: &DatasetSplit,
    targets: &DistillationTargets,
    student_cfg: &StudentConfig,
    loss_params: &HybridLossParams,
    run_cfg: &RunConfig,
) -> Result<StudentRun> {
    run_cfg.validate()?;
    loss_params.validate()?;
    check_split(split, student_cfg.n_classes)?;
    if student_cfg.embedding_dim != targets.embedding_dim {
        return Err(Error::Config(format!(
            "student embedding_dim {} does not match target dim {}",
            student_cfg.embedding_dim, targets.embedding_dim
        )));
    }
    for patch in &split.train {
        if !targets.targets.contains_key(&patch.patch_id) {
            return Err(Error::Config(format!(
                "distillation targets missing patch {}",
                patch.patch_id
            )));
        }
    }

    let mut model = StudentModel::new(student_cfg.clone(), run_cfg.seed)?;
    let mut opt = Adam::new(run_cfg.learning_rate);
    let mut curve = Vec::new();
    let mut distance_curve = Vec::new();
    let mut ce_curve = Vec::new();

    for epoch in 0..run_cfg.epochs {
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(run_cfg.seed, epoch));
        order.shuffle(&mut rng);
        let (mut epoch_loss, mut epoch_dist) = (0.0, 0.0);
        for chunk in order.chunks(run_cfg.batch_size) {
            model.zero_grad();
            let mut items = Vec::with_capacity(chunk.len());
            let mut caches = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let patch = &split.train[i];
                let cache = model.forward_cached(patch)?;
                let logits = model.logits_from_cache(&cache);
                items.push(HybridItem {
                    z: to_f64(cache.embedding()),
                    z_hat: to_f64(&targets.targets[&patch.patch_id]),
                    y: patch.label.index,
                    logits: to_f64(&logits),
                });
                caches.push(cache);
            }
            let (loss, grads) = hybrid_loss_with_grad(&items, loss_params)?;
            check_finite(loss, "student", epoch)?;
            epoch_loss += loss;
            for item in &items {
                let d: f64 = item
                    .z
                    .iter()
                    .zip(&item.z_hat)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                epoch_dist += loss_params.gamma * d;
            }
            for (grad, cache) in grads.iter().zip(caches.iter()) {
                model.backward(cache, &to_f32(&grad.z), &to_f32(&grad.logits));
            }
            opt.step(&mut model.params_mut());
        }
        // CE component is the remainder of the total.
        let ce = epoch_loss - epoch_dist;
        curve.push((epoch, epoch_loss));
        distance_curve.push(epoch_dist);
        ce_curve.push(ce);
    }
    Ok(StudentRun {
        model,
        meta: TrainingMeta { seed: run_cfg.seed, epochs_run: run_cfg.epochs, loss_curve: curve },
        distance_curve,
        ce_curve,
    })
}

/// Which baseline to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BaselineKind {
    Siamese,
    Triplet,
}

/// Train a baseline with the same backbone: contrastive loss on pairs or
/// triplet-margin loss on semi-hard mined triplets.
pub fn train_baseline(
    split: &DatasetSplit,
    kind: BaselineKind,
    student_cfg: &StudentConfig,
    margin: f64,
    run_cfg: &RunConfig,
) -> Result<StudentRun> {
    run_cfg.validate()?;
    check_split(split, student_cfg.n_classes)?;
    if margin <= 0.0 {
        return Err(Error::Config(format!("margin must be > 0, got {margin}")));
    }
    let mut model = StudentModel::new(student_cfg.clone(), run_cfg.seed)?;
    let mut opt = Adam::new(run_cfg.learning_rate);
    let mut curve = Vec::new();
    let samples_per_epoch = split.train.len().max(run_cfg.batch_size);

    for epoch in 0..run_cfg.epochs {
        let mut epoch_loss = 0.0;
        match kind {
            BaselineKind::Siamese => {
                let pairs =
                    make_pairs(&split.train, samples_per_epoch, epoch_seed(run_cfg.seed, epoch))?;
                for chunk in pairs.chunks(run_cfg.batch_size) {
                    model.zero_grad();
                    let mut items = Vec::with_capacity(chunk.len());
                    let mut caches = Vec::with_capacity(chunk.len());
                    for (a, b, same) in chunk {
                        let ca = model.forward_cached(a)?;
                        let cb = model.forward_cached(b)?;
                        items.push(ContrastivePair {
                            e1: to_f64(ca.embedding()),
                            e2: to_f64(cb.embedding()),
                            same: *same,
                        });
                        caches.push((ca, cb));
                    }
                    let (loss, grads) = contrastive_loss_with_grad(&items, margin)?;
                    check_finite(loss, "siamese", epoch)?;
                    epoch_loss += loss;
                    let zeros = vec![0.0f32; student_cfg.n_classes];
                    for (grad, (ca, cb)) in grads.iter().zip(caches.iter()) {
                        model.backward(ca, &to_f32(&grad.e1), &zeros);
                        model.backward(cb, &to_f32(&grad.e2), &zeros);
                    }
                    opt.step(&mut model.params_mut());
                }
            }
            BaselineKind::Triplet => {
                let triplets =
                    make_triplets(&split.train, samples_per_epoch, epoch_seed(run_cfg.seed, epoch))?;
                for batch in batch_triplets(triplets, run_cfg.batch_size) {
                    model.zero_grad();
                    // Embed the batch once, then swap each sampled negative
                    // for the semi-hard one when a candidate qualifies.
                    let mut anchor_caches = Vec::new();
                    let mut positive_caches = Vec::new();
                    let mut negative_caches = Vec::new();
                    for t in &batch.triplets {
                        anchor_caches.push((t.anchor.label.index, model.forward_cached(t.anchor)?));
                        positive_caches.push(model.forward_cached(t.positive)?);
                        negative_caches.push((t.negative.label.index, model.forward_cached(t.negative)?));
                    }
                    let mut items = Vec::with_capacity(batch.triplets.len());
                    let mut chosen = Vec::with_capacity(batch.triplets.len());
                    for i in 0..batch.triplets.len() {
                        let (anchor_class, ref ca) = anchor_caches[i];
                        let a = to_f64(ca.embedding());
                        let p = to_f64(positive_caches[i].embedding());
                        let candidates: Vec<usize> = (0..negative_caches.len())
                            .filter(|&j| negative_caches[j].0 != anchor_class)
                            .collect();
                        let cand_embs: Vec<Vec<f64>> = candidates
                            .iter()
                            .map(|&j| to_f64(negative_caches[j].1.embedding()))
                            .collect();
                        let neg_idx = match mine_semi_hard(&a, &p, &cand_embs, margin)? {
                            Some(m) => candidates[m],
                            None => i, // fall back to the sampled negative
                        };
                        items.push(TripletItem {
                            anchor: a,
                            positive: p,
                            negative: to_f64(negative_caches[neg_idx].1.embedding()),
                        });
                        chosen.push(neg_idx);
                    }
                    let (loss, grads) = triplet_margin_loss_with_grad(&items, margin)?;
                    check_finite(loss, "triplet", epoch)?;
                    epoch_loss += loss;
                    let zeros = vec![0.0f32; student_cfg.n_classes];
                    for (i, grad) in grads.iter().enumerate() {
                        model.backward(&anchor_caches[i].1, &to_f32(&grad.anchor), &zeros);
                        model.backward(&positive_caches[i], &to_f32(&grad.positive), &zeros);
                        model.backward(&negative_caches[chosen[i]].1, &to_f32(&grad.negative), &zeros);
                    }
                    opt.step(&mut model.params_mut());
                }
            }
        }
        curve.push((epoch, epoch_loss));
    }
    Ok(StudentRun {
        model,
        meta: TrainingMeta { seed: run_cfg.seed, epochs_run: run_cfg.epochs, loss_curve: curve },
        distance_curve: Vec::new(),
        ce_curve: Vec::new(),
    })
}

/// Embed a list of patches with a student model into an [`EmbeddingSet`].
pub fn student_embeddings(
    model: &StudentModel,
    patches: &[PatchRecord],
    split: SplitTag,
    model_id: &str,
    seed: u64,
) -> Result<EmbeddingSet> {
    let d = model.config.embedding_dim;
    let mut matrix = ndarray::Array2::<f64>::zeros((patches.len(), d));
    let mut labels = Vec::with_capacity(patches.len());
    for (i, patch) in patches.iter().enumerate() {
        let (emb, _) = model.forward(patch)?;
        for (j, v) in emb.iter().enumerate() {
            matrix[[i, j]] = *v as f64;
        }
        labels.push(patch.label.index);
    }
    EmbeddingSet::new(
        matrix,
        labels,
        split,
        Provenance { model_id: model_id.to_string(), seed, embedding_dim: d },
    )
}

/// Mean held-out triplet margin `d(a,n) - d(a,p)` of a student embedding.
pub fn heldout_triplet_margin(
    model: &StudentModel,
    patches: &[PatchRecord],
    n_triplets: usize,
    seed: u64,
) -> Result<f64> {
    let triplets = make_triplets(patches, n_triplets, seed)?;
    let mut total = 0.0;
    for t in &triplets {
        let a = to_f64(&model.forward(t.anchor)?.0);
        let p = to_f64(&model.forward(t.positive)?.0);
        let n = to_f64(&model.forward(t.negative)?.0);
        let d_ap = crate::losses::euclidean(&a, &p)?;
        let d_an = crate::losses::euclidean(&a, &n)?;
        total += d_an - d_ap;
    }
    Ok(total / triplets.len() as f64)
}
