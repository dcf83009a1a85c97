//! Loss functions: the coupled local/global teacher loss, the hybrid
//! distillation loss, and the contrastive / triplet-margin baselines.
//!
//! All losses reduce by summation over the batch and return gradients with
//! respect to every input vector, so they can drive either the built-in
//! trainers or a finite-difference check.

use crate::error::{Error, Result};

/// Parameters of the teacher loss: `beta` weights the local (intermediate
/// representation) term against the global hinge term, `margin` is the `m`
/// added to the anchor-positive distance to form the dynamic margin.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GeminiLossParams {
    pub beta: f64,
    pub margin: f64,
}

impl Default for GeminiLossParams {
    fn default() -> Self {
        Self { beta: 0.5, margin: 1.0 }
    }
}

impl GeminiLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must be in [0,1], got {}", self.beta)));
        }
        if self.margin <= 0.0 {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        Ok(())
    }
}

/// Parameters of the hybrid distillation loss: `gamma` scales the
/// embedding-distance term relative to the cross-entropy term.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct HybridLossParams {
    pub gamma: f64,
}

impl Default for HybridLossParams {
    fn default() -> Self {
        Self { gamma: 0.5 }
    }
}

impl HybridLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must be in (0,1), got {}", self.gamma)));
        }
        Ok(())
    }
}

/// One triplet of the teacher loss: intermediate representations of the
/// anchor/positive pair plus final embeddings of all three samples.
#[derive(Debug, Clone)]
pub struct GeminiItem {
    pub f_anchor: Vec<f64>,
    pub f_positive: Vec<f64>,
    pub g_anchor: Vec<f64>,
    pub g_positive: Vec<f64>,
    pub g_negative: Vec<f64>,
}

/// Gradients of the teacher loss with respect to one [`GeminiItem`].
#[derive(Debug, Clone)]
pub struct GeminiItemGrad {
    pub f_anchor: Vec<f64>,
    pub f_positive: Vec<f64>,
    pub g_anchor: Vec<f64>,
    pub g_positive: Vec<f64>,
    pub g_negative: Vec<f64>,
}

/// One element of the hybrid loss batch: student embedding `z`, teacher
/// target `z_hat`, true class index and student classification logits.
#[derive(Debug, Clone)]
pub struct HybridItem {
    pub z: Vec<f64>,
    pub z_hat: Vec<f64>,
    pub y: usize,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HybridItemGrad {
    pub z: Vec<f64>,
    pub z_hat: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ContrastivePair {
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    pub same: bool,
}

#[derive(Debug, Clone)]
pub struct ContrastivePairGrad {
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TripletItem {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TripletItemGrad {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Euclidean distance between two equal-length vectors.
pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "distance between vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

// Subgradient of d(a,b) wrt a is (a-b)/d; zero at d = 0.
fn dist_grad(a: &[f64], b: &[f64], d: f64, scale: f64, out: &mut [f64]) {
    if d < 1e-12 {
        return;
    }
    for i in 0..a.len() {
        out[i] += scale * (a[i] - b[i]) / d;
    }
}

fn zeros_like(v: &[f64]) -> Vec<f64> {
    vec![0.0; v.len()]
}

/// Teacher loss: per triplet,
/// `beta * d(f_a, f_p) + (1 - beta) * [d(g_a, g_p) + m - d(g_a, g_n)]+`,
/// summed over the batch. Gradients flow through the dynamic margin.
pub fn gemini_loss(batch: &[GeminiItem], params: &GeminiLossParams) -> Result<f64> {
    gemini_loss_with_grad(batch, params).map(|(v, _)| v)
}

pub fn gemini_loss_with_grad(
    batch: &[GeminiItem],
    params: &GeminiLossParams,
) -> Result<(f64, Vec<GeminiItemGrad>)> {
    params.validate()?;
    let beta = params.beta;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for item in batch {
        let d_f = euclidean(&item.f_anchor, &item.f_positive)?;
        let d_ap = euclidean(&item.g_anchor, &item.g_positive)?;
        let d_an = euclidean(&item.g_anchor, &item.g_negative)?;
        let hinge_arg = d_ap + params.margin - d_an;
        let hinge = hinge_arg.max(0.0);
        total += beta * d_f + (1.0 - beta) * hinge;

        let mut g = GeminiItemGrad {
            f_anchor: zeros_like(&item.f_anchor),
            f_positive: zeros_like(&item.f_positive),
            g_anchor: zeros_like(&item.g_anchor),
            g_positive: zeros_like(&item.g_positive),
            g_negative: zeros_like(&item.g_negative),
        };
        dist_grad(&item.f_anchor, &item.f_positive, d_f, beta, &mut g.f_anchor);
        dist_grad(&item.f_positive, &item.f_anchor, d_f, beta, &mut g.f_positive);
        if hinge_arg > 0.0 {
            let w = 1.0 - beta;
            dist_grad(&item.g_anchor, &item.g_positive, d_ap, w, &mut g.g_anchor);
            dist_grad(&item.g_positive, &item.g_anchor, d_ap, w, &mut g.g_positive);
            dist_grad(&item.g_anchor, &item.g_negative, d_an, -w, &mut g.g_anchor);
            dist_grad(&item.g_negative, &item.g_anchor, d_an, -w, &mut g.g_negative);
        }
        grads.push(g);
    }
    Ok((total, grads))
}

/// Softmax cross-entropy for one sample: loss and gradient on the logits.
pub fn cross_entropy_with_grad(logits: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
    if y >= logits.len() {
        return Err(Error::RejectedInput(format!(
            "class index {y} out of range for {} logits",
            logits.len()
        )));
    }
    let log_p = log_softmax(logits);
    let mut grad: Vec<f64> = log_p.iter().map(|&lp| lp.exp()).collect();
    grad[y] -= 1.0;
    Ok((-log_p[y], grad))
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| x - lse).collect()
}

/// Hybrid distillation loss: per sample,
/// `gamma * ||z - z_hat|| + CE(y, softmax(logits))`, summed over the batch.
pub fn hybrid_loss(batch: &[HybridItem], params: &HybridLossParams) -> Result<f64> {
    hybrid_loss_with_grad(batch, params).map(|(v, _)| v)
}

pub fn hybrid_loss_with_grad(
    batch: &[HybridItem],
    params: &HybridLossParams,
) -> Result<(f64, Vec<HybridItemGrad>)> {
    params.validate()?;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for item in batch {
        if item.y >= item.logits.len() {
            return Err(Error::RejectedInput(format!(
                "class index {} out of range for {} logits",
                item.y,
                item.logits.len()
            )));
        }
        let d = euclidean(&item.z, &item.z_hat)?;
        let log_p = log_softmax(&item.logits);
        let ce = -log_p[item.y];
        total += params.gamma * d + ce;

        let mut g = HybridItemGrad {
            z: zeros_like(&item.z),
            z_hat: zeros_like(&item.z_hat),
            logits: log_p.iter().map(|&lp| lp.exp()).collect(),
        };
        g.logits[item.y] -= 1.0;
        dist_grad(&item.z, &item.z_hat, d, params.gamma, &mut g.z);
        dist_grad(&item.z_hat, &item.z, d, params.gamma, &mut g.z_hat);
        grads.push(g);
    }
    Ok((total, grads))
}

/// Contrastive loss in the classic squared form: `d^2` for similar pairs,
/// `[margin - d]+^2` for dissimilar pairs, summed over the batch.
pub fn contrastive_loss(pairs: &[ContrastivePair], margin: f64) -> Result<f64> {
    contrastive_loss_with_grad(pairs, margin).map(|(v, _)| v)
}

pub fn contrastive_loss_with_grad(
    pairs: &[ContrastivePair],
    margin: f64,
) -> Result<(f64, Vec<ContrastivePairGrad>)> {
    if margin <= 0.0 {
        return Err(Error::Config(format!("margin must be > 0, got {margin}")));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let d = euclidean(&pair.e1, &pair.e2)?;
        let mut g = ContrastivePairGrad { e1: zeros_like(&pair.e1), e2: zeros_like(&pair.e2) };
        if pair.same {
            total += d * d;
            // d(d^2)/da = 2 (a - b); no division by d needed.
            for i in 0..pair.e1.len() {
                g.e1[i] = 2.0 * (pair.e1[i] - pair.e2[i]);
                g.e2[i] = -g.e1[i];
            }
        } else {
            let hinge = (margin - d).max(0.0);
            total += hinge * hinge;
            if hinge > 0.0 {
                dist_grad(&pair.e1, &pair.e2, d, -2.0 * hinge, &mut g.e1);
                dist_grad(&pair.e2, &pair.e1, d, -2.0 * hinge, &mut g.e2);
            }
        }
        grads.push(g);
    }
    Ok((total, grads))
}

/// Triplet margin loss: `[d(a,p) - d(a,n) + margin]+`, summed over the batch.
pub fn triplet_margin_loss(triplets: &[TripletItem], margin: f64) -> Result<f64> {
    triplet_margin_loss_with_grad(triplets, margin).map(|(v, _)| v)
}

pub fn triplet_margin_loss_with_grad(
    triplets: &[TripletItem],
    margin: f64,
) -> Result<(f64, Vec<TripletItemGrad>)> {
    if margin <= 0.0 {
        return Err(Error::Config(format!("margin must be > 0, got {margin}")));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(triplets.len());
    for t in triplets {
        let d_ap = euclidean(&t.anchor, &t.positive)?;
        let d_an = euclidean(&t.anchor, &t.negative)?;
        let hinge_arg = d_ap - d_an + margin;
        total += hinge_arg.max(0.0);
        let mut g = TripletItemGrad {
            anchor: zeros_like(&t.anchor),
            positive: zeros_like(&t.positive),
            negative: zeros_like(&t.negative),
        };
        if hinge_arg > 0.0 {
            dist_grad(&t.anchor, &t.positive, d_ap, 1.0, &mut g.anchor);
            dist_grad(&t.positive, &t.anchor, d_ap, 1.0, &mut g.positive);
            dist_grad(&t.anchor, &t.negative, d_an, -1.0, &mut g.anchor);
            dist_grad(&t.negative, &t.anchor, d_an, -1.0, &mut g.negative);
        }
        grads.push(g);
    }
    Ok((total, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_gemini(f_a: f64, f_p: f64, g_a: f64, g_p: f64, g_n: f64) -> GeminiItem {
        GeminiItem {
            f_anchor: vec![f_a],
            f_positive: vec![f_p],
            g_anchor: vec![g_a],
            g_positive: vec![g_p],
            g_negative: vec![g_n],
        }
    }

    #[test]
    fn gemini_hand_examples() {
        let params = GeminiLossParams { beta: 0.5, margin: 1.0 };
        // M = 2, hinge = [2 - 2]+ = 0, loss = 0.5 * 3.
        let batch = [scalar_gemini(0.0, 3.0, 0.0, 1.0, 2.0)];
        assert_abs_diff_eq!(gemini_loss(&batch, &params).unwrap(), 1.5, epsilon = 1e-12);
        // g_n at 1.5: hinge = 0.5, loss = 1.5 + 0.5 * 0.5.
        let batch = [scalar_gemini(0.0, 3.0, 0.0, 1.0, 1.5)];
        assert_abs_diff_eq!(gemini_loss(&batch, &params).unwrap(), 1.75, epsilon = 1e-12);
        // Both terms vanish.
        let batch = [scalar_gemini(2.0, 2.0, 0.0, 1.0, 5.0)];
        assert_abs_diff_eq!(gemini_loss(&batch, &params).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gemini_beta_extremes() {
        let batch = [scalar_gemini(0.0, 2.0, 0.0, 1.0, 1.2)];
        let only_local =
            gemini_loss(&batch, &GeminiLossParams { beta: 1.0, margin: 1.0 }).unwrap();
        assert_abs_diff_eq!(only_local, 2.0, epsilon = 1e-12);
        let only_global =
            gemini_loss(&batch, &GeminiLossParams { beta: 0.0, margin: 1.0 }).unwrap();
        // hinge = 1 + 1 - 1.2 = 0.8
        assert_abs_diff_eq!(only_global, 0.8, epsilon = 1e-12);
    }

    #[test]
    fn gemini_rejects_bad_beta() {
        let batch = [scalar_gemini(0.0, 1.0, 0.0, 1.0, 2.0)];
        assert!(gemini_loss(&batch, &GeminiLossParams { beta: 1.5, margin: 1.0 }).is_err());
    }

    #[test]
    fn hybrid_hand_example() {
        // 0.5 * 1 + ln 6
        let batch = [HybridItem {
            z: vec![1.0, 0.0],
            z_hat: vec![0.0, 0.0],
            y: 2,
            logits: vec![0.0; 6],
        }];
        let params = HybridLossParams { gamma: 0.5 };
        assert_abs_diff_eq!(hybrid_loss(&batch, &params).unwrap(), 0.5 + 6.0f64.ln(), epsilon = 1e-10);
        assert_abs_diff_eq!(hybrid_loss(&batch, &params).unwrap(), 2.29176, epsilon = 1e-5);
    }

    #[test]
    fn hybrid_doubling_batch_doubles_loss() {
        let item = HybridItem {
            z: vec![0.3, -0.2],
            z_hat: vec![0.1, 0.4],
            y: 1,
            logits: vec![0.2, -0.5, 1.0],
        };
        let params = HybridLossParams { gamma: 0.3 };
        let one = hybrid_loss(&[item.clone()], &params).unwrap();
        let two = hybrid_loss(&[item.clone(), item], &params).unwrap();
        assert_abs_diff_eq!(two, 2.0 * one, epsilon = 1e-12);
    }

    #[test]
    fn hybrid_vanishes_in_confident_limit() {
        let mut logits = vec![-30.0; 6];
        logits[3] = 30.0;
        let batch = [HybridItem { z: vec![1.0, 2.0], z_hat: vec![1.0, 2.0], y: 3, logits }];
        let loss = hybrid_loss(&batch, &HybridLossParams { gamma: 0.5 }).unwrap();
        assert!(loss < 1e-10, "loss = {loss}");
    }

    #[test]
    fn contrastive_hand_examples() {
        let same = ContrastivePair { e1: vec![1.0, 2.0], e2: vec![1.0, 2.0], same: true };
        assert_abs_diff_eq!(contrastive_loss(&[same], 1.0).unwrap(), 0.0, epsilon = 1e-12);
        let far = ContrastivePair { e1: vec![0.0], e2: vec![2.0], same: false };
        assert_abs_diff_eq!(contrastive_loss(&[far], 1.0).unwrap(), 0.0, epsilon = 1e-12);
        let near = ContrastivePair { e1: vec![0.0], e2: vec![0.5], same: false };
        assert_abs_diff_eq!(contrastive_loss(&[near], 1.0).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn triplet_hand_examples() {
        let t = |ap: f64, an: f64| TripletItem {
            anchor: vec![0.0],
            positive: vec![ap],
            negative: vec![an],
        };
        assert_abs_diff_eq!(triplet_margin_loss(&[t(1.0, 3.0)], 1.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(triplet_margin_loss(&[t(1.0, 1.5)], 1.0).unwrap(), 0.5, epsilon = 1e-12);
        let collapsed = TripletItem { anchor: vec![1.0], positive: vec![1.0], negative: vec![1.0] };
        assert_abs_diff_eq!(triplet_margin_loss(&[collapsed], 1.0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn losses_are_nonnegative_and_translation_invariant() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let v = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
                (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect()
            };
            let shift: Vec<f64> = v(&mut rng);
            let add = |a: &[f64]| -> Vec<f64> { a.iter().zip(&shift).map(|(x, s)| x + s).collect() };

            let item = GeminiItem {
                f_anchor: v(&mut rng),
                f_positive: v(&mut rng),
                g_anchor: v(&mut rng),
                g_positive: v(&mut rng),
                g_negative: v(&mut rng),
            };
            let shifted = GeminiItem {
                f_anchor: add(&item.f_anchor),
                f_positive: add(&item.f_positive),
                g_anchor: add(&item.g_anchor),
                g_positive: add(&item.g_positive),
                g_negative: add(&item.g_negative),
            };
            let p = GeminiLossParams::default();
            let a = gemini_loss(&[item], &p).unwrap();
            let b = gemini_loss(&[shifted], &p).unwrap();
            assert!(a >= 0.0);
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);

            let tri = TripletItem {
                anchor: v(&mut rng),
                positive: v(&mut rng),
                negative: v(&mut rng),
            };
            let tri_s = TripletItem {
                anchor: add(&tri.anchor),
                positive: add(&tri.positive),
                negative: add(&tri.negative),
            };
            let a = triplet_margin_loss(&[tri], 1.0).unwrap();
            let b = triplet_margin_loss(&[tri_s], 1.0).unwrap();
            assert!(a >= 0.0);
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn hybrid_monotone_in_embedding_distance() {
        let logits = vec![0.1, 0.2, 0.3];
        let params = HybridLossParams { gamma: 0.4 };
        let mut last = -1.0;
        for scale in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let item = HybridItem {
                z: vec![scale, 0.0],
                z_hat: vec![0.0, 0.0],
                y: 0,
                logits: logits.clone(),
            };
            let loss = hybrid_loss(&[item], &params).unwrap();
            assert!(loss >= last);
            last = loss;
        }
    }
}
