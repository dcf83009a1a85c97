//! Grid patch extraction and per-patch channel whitening.

use ndarray::{Array3, ArrayView3, Axis};

use super::{PatchRecord, SourceImage};
use crate::error::{Error, Result};

/// Patch extraction settings. The grid stride is
/// `patch_size - max_overlap`, which bounds the overlap of any two patches
/// by `max_overlap` rows and columns.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct PatchOptions {
    pub patch_size: usize,
    pub max_overlap: usize,
    /// Minimum fraction of fragment-mask pixels a patch must cover to be kept.
    pub mask_threshold: f64,
}

impl Default for PatchOptions {
    fn default() -> Self {
        Self { patch_size: 256, max_overlap: 20, mask_threshold: 0.5 }
    }
}

impl PatchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::Config("patch_size must be positive".into()));
        }
        if self.max_overlap >= self.patch_size {
            return Err(Error::Config(format!(
                "max_overlap {} must be smaller than patch_size {}",
                self.max_overlap, self.patch_size
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.patch_size - self.max_overlap
    }
}

/// Whiten each channel of a patch to zero mean and unit population standard
/// deviation. A constant channel is clamped to all zeros.
pub fn whiten(values: &ArrayView3<f32>) -> Array3<f32> {
    let mut out = values.to_owned();
    let n = (values.dim().0 * values.dim().1) as f64;
    for c in 0..values.dim().2 {
        let channel = values.index_axis(Axis(2), c);
        let mean = channel.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = channel.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-8);
        for v in out.index_axis_mut(Axis(2), c).iter_mut() {
            *v = ((*v as f64 - mean) / std) as f32;
        }
    }
    out
}

/// Cut a source image into whitened patches on a fixed grid.
///
/// Patches lie at positions `(r * stride, c * stride)` for every grid cell
/// that fits entirely inside the image. With a fragment mask present, only
/// patches whose mask coverage reaches `mask_threshold` are kept.
pub fn extract_patches(img: &SourceImage, opts: &PatchOptions) -> Result<Vec<PatchRecord>> {
    opts.validate()?;
    let (h, w) = (img.height(), img.width());
    let ps = opts.patch_size;
    if h < ps || w < ps {
        return Err(Error::RejectedInput(format!(
            "image {} is {h}x{w}, smaller than patch size {ps}",
            img.image_id
        )));
    }
    let stride = opts.stride();
    let rows = (h - ps) / stride + 1;
    let cols = (w - ps) / stride + 1;

    let mut out = Vec::new();
    for gr in 0..rows {
        for gc in 0..cols {
            let (y, x) = (gr * stride, gc * stride);
            if let Some(mask) = &img.fragment_mask {
                let window = mask.slice(ndarray::s![y..y + ps, x..x + ps]);
                let covered = window.iter().filter(|&&m| m).count() as f64;
                if covered / ((ps * ps) as f64) < opts.mask_threshold {
                    continue;
                }
            }
            let raw = img
                .pixels
                .slice(ndarray::s![y..y + ps, x..x + ps, ..])
                .mapv(|v| v as f32);
            out.push(PatchRecord {
                patch_id: format!("{}_r{gr}_c{gc}", img.image_id),
                values: whiten(&raw.view()),
                label: img.label.clone(),
                view: img.view,
                source_image_id: img.image_id.clone(),
                grid_position: (gr, gc),
            });
        }
    }
    Ok(out)
}
