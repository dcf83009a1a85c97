//! Student embedding network: a small residual convolutional backbone with
//! an embedding head and a classification head. A full-depth backbone is a
//! matter of configuration (width/downsample); the default is sized for CPU
//! training.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PatchRecord;
use crate::error::{Error, Result};
use crate::nn::{
    global_avg, global_avg_backward, maxpool2, maxpool2_backward, patch_to_input, relu3,
    relu3_backward, Conv3x3, Linear, Param,
};

/// Allowed embedding sizes, in powers of two.
pub const STUDENT_EMBEDDING_DIMS: [usize; 8] = [8, 16, 32, 64, 128, 256, 512, 1024];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StudentConfig {
    pub embedding_dim: usize,
    pub n_classes: usize,
    /// Base channel width of the backbone.
    pub width: usize,
    /// Fixed average-pool factor applied to the 256x256 input.
    pub input_downsample: usize,
    pub patch_size: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self { embedding_dim: 32, n_classes: 6, width: 12, input_downsample: 16, patch_size: 256 }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        if !STUDENT_EMBEDDING_DIMS.contains(&self.embedding_dim) {
            return Err(Error::Config(format!(
                "embedding_dim must be one of {STUDENT_EMBEDDING_DIMS:?}, got {}",
                self.embedding_dim
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!("n_classes must be >= 2, got {}", self.n_classes)));
        }
        if self.width == 0 {
            return Err(Error::Config("width must be positive".into()));
        }
        if self.input_downsample == 0 || self.patch_size % self.input_downsample != 0 {
            return Err(Error::Config("input_downsample must divide patch_size".into()));
        }
        if (self.patch_size / self.input_downsample) % 4 != 0 {
            return Err(Error::Config(
                "downsampled input side must be divisible by 4 (two pooling stages)".into(),
            ));
        }
        Ok(())
    }

    pub fn input_side(&self) -> usize {
        self.patch_size / self.input_downsample
    }

    /// Spatial shape `(H', W', C)` of the penultimate feature map.
    pub fn penultimate_shape(&self) -> (usize, usize, usize) {
        let s = self.input_side() / 4;
        (s, s, 2 * self.width)
    }
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct StudentCache {
    x0: Array3<f32>,
    z1: Array3<f32>,
    r1: Array3<f32>,
    z2: Array3<f32>,
    r2: Array3<f32>,
    sum: Array3<f32>,
    r3_dim: (usize, usize, usize),
    p1_idx: Vec<(usize, usize)>,
    p1: Array3<f32>,
    z4: Array3<f32>,
    r4_dim: (usize, usize, usize),
    p2_idx: Vec<(usize, usize)>,
    p2: Array3<f32>,
    gap: Vec<f32>,
    embedding: Vec<f32>,
}

impl StudentCache {
    pub fn embedding(&self) -> &[f32] {
        &self.embedding
    }
}

#[derive(Debug, Clone)]
pub struct StudentModel {
    pub config: StudentConfig,
    conv_in: Conv3x3,
    res_a: Conv3x3,
    res_b: Conv3x3,
    conv_out: Conv3x3,
    fc_embed: Linear,
    fc_logits: Linear,
}

impl StudentModel {
    pub fn new(config: StudentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.width;
        Ok(Self {
            conv_in: Conv3x3::new(3, w, &mut rng),
            res_a: Conv3x3::new(w, w, &mut rng),
            res_b: Conv3x3::new(w, w, &mut rng),
            conv_out: Conv3x3::new(w, 2 * w, &mut rng),
            fc_embed: Linear::new(2 * w, config.embedding_dim, &mut rng),
            fc_logits: Linear::new(config.embedding_dim, config.n_classes, &mut rng),
            config,
        })
    }

    /// Inference forward: `(embedding, logits)`.
    pub fn forward(&self, patch: &PatchRecord) -> Result<(Vec<f32>, Vec<f32>)> {
        let cache = self.forward_cached(patch)?;
        let logits = self.fc_logits.forward(&cache.embedding);
        Ok((cache.embedding, logits))
    }

    pub fn forward_cached(&self, patch: &PatchRecord) -> Result<StudentCache> {
        let (h, w, c) = patch.values.dim();
        if h != self.config.patch_size || w != self.config.patch_size || c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "patch {} is {h}x{w}x{c}, expected {0}x{0}x3 with patch_size {}",
                patch.patch_id, self.config.patch_size
            )));
        }
        let x0 = patch_to_input(patch, self.config.input_downsample);
        let z1 = self.conv_in.forward(&x0);
        let r1 = relu3(&z1);
        let z2 = self.res_a.forward(&r1);
        let r2 = relu3(&z2);
        let z3 = self.res_b.forward(&r2);
        let sum = &z3 + &r1;
        let r3 = relu3(&sum);
        let (p1, p1_idx) = maxpool2(&r3);
        let z4 = self.conv_out.forward(&p1);
        let r4 = relu3(&z4);
        let (p2, p2_idx) = maxpool2(&r4);
        let gap = global_avg(&p2);
        let embedding = self.fc_embed.forward(&gap);
        Ok(StudentCache {
            x0,
            z1,
            r1,
            z2,
            r2,
            r3_dim: r3.dim(),
            sum,
            p1_idx,
            p1,
            z4,
            r4_dim: r4.dim(),
            p2_idx,
            p2,
            gap,
            embedding,
        })
    }

    pub fn logits_from_cache(&self, cache: &StudentCache) -> Vec<f32> {
        self.fc_logits.forward(&cache.embedding)
    }

    /// Backprop gradients on the embedding and on the logits down to every
    /// parameter of the model.
    pub fn backward(&mut self, cache: &StudentCache, grad_embedding: &[f32], grad_logits: &[f32]) {
        let mut grad_emb = grad_embedding.to_vec();
        if grad_logits.iter().any(|&g| g != 0.0) {
            let g = self.fc_logits.backward(&cache.embedding, grad_logits);
            for (a, b) in grad_emb.iter_mut().zip(g) {
                *a += b;
            }
        }
        let grad_gap = self.fc_embed.backward(&cache.gap, &grad_emb);
        let grad_p2 = global_avg_backward(cache.p2.dim(), &grad_gap);
        let grad_r4 = maxpool2_backward(cache.r4_dim, &cache.p2_idx, &grad_p2);
        let grad_z4 = relu3_backward(&cache.z4, &grad_r4);
        let grad_p1 = self.conv_out.backward(&cache.p1, &grad_z4);
        let grad_r3 = maxpool2_backward(cache.r3_dim, &cache.p1_idx, &grad_p1);
        let grad_sum = relu3_backward(&cache.sum, &grad_r3);
        // Residual: grad flows both into the block and the skip connection.
        let grad_r2 = self.res_b.backward(&cache.r2, &grad_sum);
        let grad_z2 = relu3_backward(&cache.z2, &grad_r2);
        let grad_r1_block = self.res_a.backward(&cache.r1, &grad_z2);
        let grad_r1 = &grad_r1_block + &grad_sum;
        let grad_z1 = relu3_backward(&cache.z1, &grad_r1);
        let _ = self.conv_in.backward(&cache.x0, &grad_z1);
    }

    /// Spatial feature map `(H', W', C)` feeding the embedding head; used by
    /// the stack-and-pool fusion strategy.
    pub fn penultimate_features(&self, patch: &PatchRecord) -> Result<Array3<f32>> {
        let cache = self.forward_cached(patch)?;
        let (c, h, w) = cache.p2.dim();
        let mut out = Array3::<f32>::zeros((h, w, c));
        for ((ch, y, x), &v) in cache.p2.indexed_iter() {
            out[[y, x, ch]] = v;
        }
        Ok(out)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        out.extend(self.conv_in.params());
        out.extend(self.res_a.params());
        out.extend(self.res_b.params());
        out.extend(self.conv_out.params());
        out.extend(self.fc_embed.params());
        out.extend(self.fc_logits.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        out.extend(self.conv_in.params_mut());
        out.extend(self.res_a.params_mut());
        out.extend(self.res_b.params_mut());
        out.extend(self.conv_out.params_mut());
        out.extend(self.fc_embed.params_mut());
        out.extend(self.fc_logits.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}
