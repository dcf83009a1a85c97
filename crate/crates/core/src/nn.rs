//! Minimal CPU neural-network substrate: parameter tensors with Adam
//! state, 3x3 convolutions, pooling, and fully connected layers, all with
//! hand-written backward passes. `f32` throughout; deterministic given a
//! seeded RNG.

use ndarray::{Array3, Array4, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::PatchRecord;

/// A trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    m: ArrayD<f32>,
    v: ArrayD<f32>,
}

impl Param {
    pub fn new(value: ArrayD<f32>) -> Self {
        let zeros = ArrayD::zeros(value.raw_dim());
        Self { grad: zeros.clone(), m: zeros.clone(), v: zeros, value }
    }

    /// Uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = 1.0 / (fan_in as f32).sqrt();
        let data: Vec<f32> = (0..shape.iter().product::<usize>())
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self::new(ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/data mismatch"))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Adam optimizer; one instance owns the step counter for a model.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0 }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for p in params.iter_mut() {
            let g = p.grad.clone();
            ndarray::Zip::from(&mut p.m).and(&g).for_each(|m, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            });
            ndarray::Zip::from(&mut p.v).and(&g).for_each(|v, &g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            });
            let (m, v) = (&p.m, &p.v);
            ndarray::Zip::from(&mut p.value).and(m).and(v).for_each(|w, &m, &v| {
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            });
        }
    }
}

/// Same-padded 3x3 convolution, stride 1.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    pub weight: Param,
    pub bias: Param,
    pub in_c: usize,
    pub out_c: usize,
}

impl Conv3x3 {
    pub fn new(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Param::uniform(&[out_c, in_c, 3, 3], in_c * 9, rng),
            bias: Param::uniform(&[out_c], in_c * 9, rng),
            in_c,
            out_c,
        }
    }

    pub fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let (in_c, h, w) = x.dim();
        debug_assert_eq!(in_c, self.in_c);
        let wgt: Array4<f32> =
            self.weight.value.view().into_dimensionality().expect("conv weight rank").to_owned();
        let bias = &self.bias.value;
        let mut out = Array3::<f32>::zeros((self.out_c, h, w));
        for o in 0..self.out_c {
            let b = bias[o];
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = b;
                    for i in 0..in_c {
                        for ky in 0..3usize {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..3usize {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                acc += wgt[[o, i, ky, kx]] * x[[i, sy as usize, sx as usize]];
                            }
                        }
                    }
                    out[[o, y, xx]] = acc;
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array3<f32>, grad_out: &Array3<f32>) -> Array3<f32> {
        let (in_c, h, w) = x.dim();
        let wgt: Array4<f32> =
            self.weight.value.view().into_dimensionality().expect("conv weight rank").to_owned();
        let mut grad_w = Array4::<f32>::zeros((self.out_c, in_c, 3, 3));
        let mut grad_x = Array3::<f32>::zeros((in_c, h, w));
        for o in 0..self.out_c {
            let mut gb = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    let go = grad_out[[o, y, xx]];
                    if go == 0.0 {
                        continue;
                    }
                    gb += go;
                    for i in 0..in_c {
                        for ky in 0..3usize {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..3usize {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                grad_w[[o, i, ky, kx]] += go * x[[i, sy as usize, sx as usize]];
                                grad_x[[i, sy as usize, sx as usize]] += go * wgt[[o, i, ky, kx]];
                            }
                        }
                    }
                    // bias grad accumulated in gb; weight/input handled above
                }
            }
            self.bias.grad[o] += gb;
        }
        let gw_dyn = grad_w.into_dyn();
        self.weight.grad += &gw_dyn;
        grad_x
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

/// Fully connected layer.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Param::uniform(&[out_dim, in_dim], in_dim, rng),
            bias: Param::uniform(&[out_dim], in_dim, rng),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.in_dim);
        let w = &self.weight.value;
        let mut out = vec![0.0; self.out_dim];
        for o in 0..self.out_dim {
            let mut acc = self.bias.value[o];
            for i in 0..self.in_dim {
                acc += w[[o, i]] * x[i];
            }
            out[o] = acc;
        }
        out
    }

    pub fn backward(&mut self, x: &[f32], grad_out: &[f32]) -> Vec<f32> {
        let w = self.weight.value.clone();
        let mut grad_x = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let go = grad_out[o];
            self.bias.grad[o] += go;
            for i in 0..self.in_dim {
                self.weight.grad[[o, i]] += go * x[i];
                grad_x[i] += go * w[[o, i]];
            }
        }
        grad_x
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

pub fn relu3(x: &Array3<f32>) -> Array3<f32> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu3_backward(x: &Array3<f32>, grad_out: &Array3<f32>) -> Array3<f32> {
    let mut g = grad_out.clone();
    ndarray::Zip::from(&mut g).and(x).for_each(|g, &x| {
        if x <= 0.0 {
            *g = 0.0;
        }
    });
    g
}

pub fn relu1(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn relu1_backward(x: &[f32], grad_out: &[f32]) -> Vec<f32> {
    x.iter().zip(grad_out).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect()
}

/// 2x2 max pooling with stride 2; returns the pooled map and the argmax
/// offsets needed by the backward pass.
pub fn maxpool2(x: &Array3<f32>) -> (Array3<f32>, Vec<(usize, usize)>) {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::<f32>::zeros((c, oh, ow));
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_pos = (2 * y, 2 * xx);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let v = x[[ch, 2 * y + dy, 2 * xx + dx]];
                        if v > best {
                            best = v;
                            best_pos = (2 * y + dy, 2 * xx + dx);
                        }
                    }
                }
                out[[ch, y, xx]] = best;
                idx.push(best_pos);
            }
        }
    }
    (out, idx)
}

pub fn maxpool2_backward(
    input_dim: (usize, usize, usize),
    idx: &[(usize, usize)],
    grad_out: &Array3<f32>,
) -> Array3<f32> {
    let (c, _, _) = input_dim;
    let (_, oh, ow) = grad_out.dim();
    let mut grad_x = Array3::<f32>::zeros(input_dim);
    let mut k = 0;
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let (sy, sx) = idx[k];
                grad_x[[ch, sy, sx]] += grad_out[[ch, y, xx]];
                k += 1;
            }
        }
    }
    grad_x
}

/// Global average pooling `(C, H, W) -> (C)`.
pub fn global_avg(x: &Array3<f32>) -> Vec<f32> {
    let (c, h, w) = x.dim();
    let n = (h * w) as f32;
    (0..c)
        .map(|ch| x.index_axis(ndarray::Axis(0), ch).sum() / n)
        .collect()
}

pub fn global_avg_backward(input_dim: (usize, usize, usize), grad_out: &[f32]) -> Array3<f32> {
    let (c, h, w) = input_dim;
    let n = (h * w) as f32;
    let mut g = Array3::<f32>::zeros(input_dim);
    for ch in 0..c {
        let v = grad_out[ch] / n;
        g.index_axis_mut(ndarray::Axis(0), ch).fill(v);
    }
    g
}

/// Average-pool downsampling by an integer factor; used as fixed input
/// preprocessing, so it has no backward pass.
pub fn avg_downsample(x: &Array3<f32>, factor: usize) -> Array3<f32> {
    if factor <= 1 {
        return x.clone();
    }
    let (c, h, w) = x.dim();
    let (oh, ow) = (h / factor, w / factor);
    let n = (factor * factor) as f32;
    let mut out = Array3::<f32>::zeros((c, oh, ow));
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += x[[ch, y * factor + dy, xx * factor + dx]];
                    }
                }
                out[[ch, y, xx]] = acc / n;
            }
        }
    }
    out
}

/// Convert a `(H, W, 3)` patch into a downsampled `(3, H/f, W/f)` input.
pub fn patch_to_input(patch: &PatchRecord, downsample: usize) -> Array3<f32> {
    let (h, w, c) = patch.values.dim();
    if downsample <= 1 {
        return Array3::from_shape_fn((c, h, w), |(ch, y, x)| patch.values[[y, x, ch]]);
    }
    let (oh, ow) = (h / downsample, w / downsample);
    let n = (downsample * downsample) as f32;
    let mut out = Array3::<f32>::zeros((c, oh, ow));
    // One pass over the contiguous (H, W, C) buffer, accumulating block
    // sums; per-cell addition order matches a row-major block scan.
    let values = patch.values.as_slice().expect("patch values are standard layout");
    for y in 0..oh * downsample {
        let oy = y / downsample;
        for x in 0..ow * downsample {
            let ox = x / downsample;
            let base = (y * w + x) * c;
            for ch in 0..c {
                out[[ch, oy, ox]] += values[base + ch];
            }
        }
    }
    out.mapv_inplace(|v| v / n);
    out
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}
