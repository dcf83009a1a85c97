//! Procedural stand-in dataset: each class gets a base color and an
//! oriented stripe texture, with per-image jitter and noise. Classes are
//! separable by color before whitening and by texture after it.

use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ClassSet, SourceImage, View};
use crate::error::{Error, Result};

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub images_per_class: usize,
    pub image_size: (usize, usize),
    pub seed: u64,
    pub view: View,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 6,
            images_per_class: 20,
            image_size: (512, 512),
            seed: 0,
            view: View::Sur,
        }
    }
}

fn mix_seed(seed: u64, class: usize, image: usize, view: View) -> u64 {
    let v = match view {
        View::Sur => 0u64,
        View::Sec => 0x5EC0_5EC0_5EC0_5EC0,
    };
    seed ^ (class as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (image as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ v
}

/// Per-class appearance parameters. The section view rotates textures and
/// the palette so the two views carry related but distinct information.
///
/// Class identity is carried by the orientation of a low-frequency grating
/// (and, before whitening, by the base color). Everything else — stripe
/// phase, per-channel phase offsets, amplitudes, a higher-frequency
/// distractor grating, pixel noise — varies per image, so raw pixel
/// statistics are dominated by nuisance variation and the orientation cue
/// has to be learned.
struct ClassStyle {
    base: [f64; 3],
    orientation: f64,
}

fn class_style(class: usize, n_classes: usize, view: View) -> ClassStyle {
    let hue = class as f64 / n_classes as f64
        + match view {
            View::Sur => 0.0,
            View::Sec => 0.5 / n_classes as f64,
        };
    let base = [
        128.0 + 70.0 * (std::f64::consts::TAU * hue).sin(),
        128.0 + 70.0 * (std::f64::consts::TAU * (hue + 1.0 / 3.0)).sin(),
        128.0 + 70.0 * (std::f64::consts::TAU * (hue + 2.0 / 3.0)).sin(),
    ];
    let view_rot = match view {
        View::Sur => 0.0,
        View::Sec => std::f64::consts::PI / 12.0,
    };
    ClassStyle {
        base,
        orientation: std::f64::consts::PI * class as f64 / n_classes as f64 + view_rot,
    }
}

/// Generate `n_classes * images_per_class` labeled images, deterministic in
/// the spec's seed.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, classes: &ClassSet) -> Result<Vec<SourceImage>> {
    if spec.n_classes < 2 {
        return Err(Error::Config(format!(
            "synthetic dataset needs at least 2 classes, got {}",
            spec.n_classes
        )));
    }
    if spec.n_classes > classes.len() {
        return Err(Error::Config(format!(
            "requested {} classes but class set has {}",
            spec.n_classes,
            classes.len()
        )));
    }
    let (h, w) = spec.image_size;
    let mut out = Vec::with_capacity(spec.n_classes * spec.images_per_class);
    for k in 0..spec.n_classes {
        let style = class_style(k, spec.n_classes, spec.view);
        let label = classes.label(k)?;
        for i in 0..spec.images_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, k, i, spec.view));
            let color_jitter: [f64; 3] = [
                rng.gen_range(-18.0..18.0),
                rng.gen_range(-18.0..18.0),
                rng.gen_range(-18.0..18.0),
            ];
            // Class cue: low-frequency grating at the class orientation.
            // Periods scale with the image so the texture keeps the same
            // visual coarseness at any resolution.
            let scale = h.min(w) as f64;
            let orientation = style.orientation + rng.gen_range(-0.05..0.05);
            let period = scale / 3.0 * rng.gen_range(0.95..1.05);
            let amp = rng.gen_range(26.0..54.0);
            let phases: [f64; 3] = std::array::from_fn(|_| {
                rng.gen_range(0.0..std::f64::consts::TAU)
            });
            // Nuisance: higher-frequency distractor grating with a random
            // orientation, plus pixel noise.
            let d_orientation = rng.gen_range(0.0..std::f64::consts::PI);
            let d_period = scale * rng.gen_range(0.078..0.137);
            let d_amp = rng.gen_range(16.0..36.0);
            let d_phases: [f64; 3] = std::array::from_fn(|_| {
                rng.gen_range(0.0..std::f64::consts::TAU)
            });
            let noise_amp = 16.0;
            let (cos_t, sin_t) = (orientation.cos(), orientation.sin());
            let (d_cos_t, d_sin_t) = (d_orientation.cos(), d_orientation.sin());

            let mut pixels = Array3::<u8>::zeros((h, w, 3));
            for y in 0..h {
                for x in 0..w {
                    let proj = (x as f64 * cos_t + y as f64 * sin_t) * std::f64::consts::TAU / period;
                    let d_proj = (x as f64 * d_cos_t + y as f64 * d_sin_t) * std::f64::consts::TAU
                        / d_period;
                    let (proj_sin, proj_cos) = proj.sin_cos();
                    let (d_sin, d_cos) = d_proj.sin_cos();
                    for c in 0..3 {
                        // sin(proj + phase) expanded so the per-pixel
                        // trigonometry is shared across channels.
                        let stripe = proj_sin * phases[c].cos() + proj_cos * phases[c].sin();
                        let distract = d_sin * d_phases[c].cos() + d_cos * d_phases[c].sin();
                        let v = style.base[c]
                            + color_jitter[c]
                            + amp * stripe
                            + d_amp * distract
                            + rng.gen_range(-noise_amp..noise_amp);
                        pixels[[y, x, c]] = v.clamp(0.0, 255.0) as u8;
                    }
                }
            }
            out.push(SourceImage::new(
                format!("{}_{}_{i:03}", spec.view.as_str(), label.name),
                pixels,
                label.clone(),
                spec.view,
                None,
            )?);
        }
    }
    Ok(out)
}
