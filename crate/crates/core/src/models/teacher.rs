//! Multi-stream teacher: one small convolutional stream per class feeding a
//! shared fully connected head. A sample is routed through the stream of
//! its own class; stream outputs are the intermediate representations, the
//! shared head produces the final embedding.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PatchRecord;
use crate::error::{Error, Result};
use crate::nn::{
    maxpool2, maxpool2_backward, patch_to_input, relu1, relu1_backward, relu3, relu3_backward,
    Conv3x3, Linear, Param,
};

/// Teacher architecture parameters. Each stream is two conv blocks
/// (conv -> relu -> maxpool); the global head is two fully connected layers.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TeacherConfig {
    pub n_classes: usize,
    pub embedding_dim: usize,
    /// Channel widths of the two stream conv blocks.
    pub stream_channels: (usize, usize),
    /// Hidden width of the shared head.
    pub hidden_dim: usize,
    /// Fixed average-pool factor applied to the 256x256 input.
    pub input_downsample: usize,
    pub patch_size: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            n_classes: 6,
            embedding_dim: 32,
            stream_channels: (8, 16),
            hidden_dim: 64,
            input_downsample: 16,
            patch_size: 256,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("n_classes must be >= 2, got {}", self.n_classes)));
        }
        if self.embedding_dim < 2 {
            return Err(Error::Config(format!(
                "embedding_dim must be >= 2, got {}",
                self.embedding_dim
            )));
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

    /// Side length of the downsampled input.
    pub fn input_side(&self) -> usize {
        self.patch_size / self.input_downsample
    }

    /// Length of the flattened stream output (the intermediate vector).
    pub fn intermediate_dim(&self) -> usize {
        let s = self.input_side() / 4;
        self.stream_channels.1 * s * s
    }
}

#[derive(Debug, Clone)]
struct Stream {
    conv1: Conv3x3,
    conv2: Conv3x3,
}

/// Activations recorded by a stream forward pass, needed for backward.
#[derive(Debug, Clone)]
pub struct StreamCache {
    x0: Array3<f32>,
    z1: Array3<f32>,
    p1_idx: Vec<(usize, usize)>,
    r1_dim: (usize, usize, usize),
    p1: Array3<f32>,
    z2: Array3<f32>,
    p2_idx: Vec<(usize, usize)>,
    r2_dim: (usize, usize, usize),
    p2_dim: (usize, usize, usize),
}

/// Activations of the shared head.
#[derive(Debug, Clone)]
pub struct GlobalCache {
    input: Vec<f32>,
    h_pre: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct TeacherModel {
    pub config: TeacherConfig,
    streams: Vec<Stream>,
    fc1: Linear,
    fc2: Linear,
}

impl TeacherModel {
    pub fn new(config: TeacherConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c1, c2) = config.stream_channels;
        let streams = (0..config.n_classes)
            .map(|_| Stream {
                conv1: Conv3x3::new(3, c1, &mut rng),
                conv2: Conv3x3::new(c1, c2, &mut rng),
            })
            .collect();
        let fc1 = Linear::new(config.intermediate_dim(), config.hidden_dim, &mut rng);
        let fc2 = Linear::new(config.hidden_dim, config.embedding_dim, &mut rng);
        Ok(Self { config, streams, fc1, fc2 })
    }

    /// Route a patch through the stream of `class_index` and return the
    /// flattened intermediate representation.
    pub fn forward_local(&self, patch: &PatchRecord, class_index: usize) -> Result<Vec<f32>> {
        self.forward_local_cached(patch, class_index).map(|(v, _)| v)
    }

    pub fn forward_local_cached(
        &self,
        patch: &PatchRecord,
        class_index: usize,
    ) -> Result<(Vec<f32>, StreamCache)> {
        let stream = self.streams.get(class_index).ok_or_else(|| {
            Error::RejectedInput(format!(
                "class index {class_index} out of range for {} streams",
                self.streams.len()
            ))
        })?;
        let x0 = patch_to_input(patch, self.config.input_downsample);
        let z1 = stream.conv1.forward(&x0);
        let r1 = relu3(&z1);
        let (p1, p1_idx) = maxpool2(&r1);
        let z2 = stream.conv2.forward(&p1);
        let r2 = relu3(&z2);
        let (p2, p2_idx) = maxpool2(&r2);
        let flat: Vec<f32> = p2.iter().copied().collect();
        let cache = StreamCache {
            x0,
            r1_dim: r1.dim(),
            p1_idx,
            p1,
            z2: z2.clone(),
            p2_idx,
            r2_dim: r2.dim(),
            p2_dim: p2.dim(),
            z1,
        };
        Ok((flat, cache))
    }

    /// Backprop a gradient on the intermediate vector into stream
    /// `class_index`'s parameters.
    pub fn backward_local(&mut self, class_index: usize, cache: &StreamCache, grad_flat: &[f32]) {
        let stream = &mut self.streams[class_index];
        let grad_p2 = Array3::from_shape_vec(cache.p2_dim, grad_flat.to_vec())
            .expect("intermediate gradient shape");
        let grad_r2 = maxpool2_backward(cache.r2_dim, &cache.p2_idx, &grad_p2);
        let grad_z2 = relu3_backward(&cache.z2, &grad_r2);
        let grad_p1 = stream.conv2.backward(&cache.p1, &grad_z2);
        let grad_r1 = maxpool2_backward(cache.r1_dim, &cache.p1_idx, &grad_p1);
        let grad_z1 = relu3_backward(&cache.z1, &grad_r1);
        let _ = stream.conv1.backward(&cache.x0, &grad_z1);
    }

    /// Shared head: intermediate representation to final embedding.
    pub fn forward_global(&self, intermediate: &[f32]) -> Result<Vec<f32>> {
        self.forward_global_cached(intermediate).map(|(v, _)| v)
    }

    pub fn forward_global_cached(&self, intermediate: &[f32]) -> Result<(Vec<f32>, GlobalCache)> {
        if intermediate.len() != self.config.intermediate_dim() {
            return Err(Error::ShapeMismatch(format!(
                "global head expects {} values, got {}",
                self.config.intermediate_dim(),
                intermediate.len()
            )));
        }
        let h_pre = self.fc1.forward(intermediate);
        let h = relu1(&h_pre);
        let emb = self.fc2.forward(&h);
        Ok((emb, GlobalCache { input: intermediate.to_vec(), h_pre }))
    }

    /// Backprop an embedding gradient through the shared head; returns the
    /// gradient with respect to the intermediate vector.
    pub fn backward_global(&mut self, cache: &GlobalCache, grad_emb: &[f32]) -> Vec<f32> {
        let h = relu1(&cache.h_pre);
        let grad_h = self.fc2.backward(&h, grad_emb);
        let grad_h_pre = relu1_backward(&cache.h_pre, &grad_h);
        self.fc1.backward(&cache.input, &grad_h_pre)
    }

    /// Full embedding of a patch routed through its own class's stream.
    pub fn embed(&self, patch: &PatchRecord) -> Result<Vec<f32>> {
        let f = self.forward_local(patch, patch.label.index)?;
        self.forward_global(&f)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for s in &self.streams {
            out.extend(s.conv1.params());
            out.extend(s.conv2.params());
        }
        out.extend(self.fc1.params());
        out.extend(self.fc2.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for s in &mut self.streams {
            out.extend(s.conv1.params_mut());
            out.extend(s.conv2.params_mut());
        }
        out.extend(self.fc1.params_mut());
        out.extend(self.fc2.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Parameters of the shared head only (used by the sharing invariant
    /// tests and for targeted mutation checks).
    pub fn global_params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        out.extend(self.fc1.params_mut());
        out.extend(self.fc2.params_mut());
        out
    }

    /// Parameters of one stream only.
    pub fn stream_params_mut(&mut self, class_index: usize) -> Vec<&mut Param> {
        let s = &mut self.streams[class_index];
        let mut out = Vec::new();
        out.extend(s.conv1.params_mut());
        out.extend(s.conv2.params_mut());
        out
    }
}
