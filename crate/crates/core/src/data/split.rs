//! Leakage-free train/test splitting at the source-image level.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{extract_patches, DatasetSplit, PatchOptions, SourceImage};
use crate::error::{Error, Result};

/// Split source images per class into train/test, then extract patches.
///
/// The split happens before patch extraction so no source image contributes
/// patches to both sides. Per class, the train count is
/// `round(train_fraction * n)` clamped so both sides stay non-empty.
/// Deterministic given `seed`.
pub fn split_dataset(
    images: &[SourceImage],
    train_fraction: f64,
    seed: u64,
    opts: &PatchOptions,
) -> Result<DatasetSplit> {
    if !(0.0 < train_fraction && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0,1), got {train_fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<&SourceImage>> = BTreeMap::new();
    for img in images {
        by_class.entry(img.label.index).or_default().push(img);
    }
    if by_class.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes, got {}",
            by_class.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class_idx, mut imgs) in by_class {
        if imgs.len() < 2 {
            return Err(Error::Config(format!(
                "class index {class_idx} has {} image(s); at least 2 required to split",
                imgs.len()
            )));
        }
        imgs.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        imgs.shuffle(&mut rng);
        let n = imgs.len();
        let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        for (i, img) in imgs.iter().enumerate() {
            let patches = extract_patches(img, opts)?;
            if i < n_train {
                train.extend(patches);
            } else {
                test.extend(patches);
            }
        }
    }
    Ok(DatasetSplit { train, test, seed })
}
