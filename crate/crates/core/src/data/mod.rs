//! Dataset types and the patch pipeline: raw labeled images are cut into
//! whitened fixed-size patches, split at the source-image level, and stored
//! on disk. A synthetic generator stands in for real endoscopic data.

mod patches;
mod split;
mod store;
mod synthetic;

pub use patches::{extract_patches, whiten, PatchOptions};
pub use split::split_dataset;
pub use store::{load_image_tree, load_patch_store, write_patch_store, write_split_manifest, SplitManifest};
pub use synthetic::{generate_synthetic_dataset, SyntheticSpec};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of a fragment an image shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    /// Surface view.
    Sur,
    /// Section view.
    Sec,
}

impl View {
    pub fn as_str(&self) -> &'static str {
        match self {
            View::Sur => "SUR",
            View::Sec => "SEC",
        }
    }

    pub fn parse(s: &str) -> Result<View> {
        match s.to_ascii_uppercase().as_str() {
            "SUR" | "SURFACE" => Ok(View::Sur),
            "SEC" | "SECTION" => Ok(View::Sec),
            other => Err(Error::Config(format!("unknown view {other:?}, expected SUR or SEC"))),
        }
    }
}

/// A class with its name and contiguous index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassLabel {
    pub name: String,
    pub index: usize,
}

/// An ordered set of class names; indices are positions in the list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSet {
    names: Vec<String>,
}

impl ClassSet {
    /// The default six-subtype class set.
    pub fn default_stones() -> Self {
        Self::new(["WW", "WD", "UA", "STR", "BRU", "CYS"].map(String::from).to_vec()).unwrap()
    }

    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Config("a class set needs at least 2 classes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.clone()) {
                return Err(Error::Config(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn label(&self, index: usize) -> Result<ClassLabel> {
        self.names
            .get(index)
            .map(|n| ClassLabel { name: n.clone(), index })
            .ok_or_else(|| Error::Config(format!("class index {index} out of range")))
    }

    pub fn label_by_name(&self, name: &str) -> Result<ClassLabel> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|index| ClassLabel { name: name.to_string(), index })
            .ok_or_else(|| Error::Config(format!("unknown class name {name:?}")))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// A raw labeled image; pixels are `(H, W, 3)` intensities in `[0, 255]`.
#[derive(Debug, Clone)]
pub struct SourceImage {
    pub image_id: String,
    pub pixels: Array3<u8>,
    pub label: ClassLabel,
    pub view: View,
    pub fragment_mask: Option<Array2<bool>>,
}

impl SourceImage {
    pub fn new(
        image_id: String,
        pixels: Array3<u8>,
        label: ClassLabel,
        view: View,
        fragment_mask: Option<Array2<bool>>,
    ) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if c != 3 {
            return Err(Error::RejectedInput(format!("image {image_id}: expected 3 channels, got {c}")));
        }
        if let Some(mask) = &fragment_mask {
            if mask.dim() != (h, w) {
                return Err(Error::RejectedInput(format!(
                    "image {image_id}: mask shape {:?} does not match image {h}x{w}",
                    mask.dim()
                )));
            }
        }
        Ok(Self { image_id, pixels, label, view, fragment_mask })
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }
}

/// A whitened patch cut from a source image; values are `(P, P, 3)`.
#[derive(Debug, Clone)]
pub struct PatchRecord {
    pub patch_id: String,
    pub values: Array3<f32>,
    pub label: ClassLabel,
    pub view: View,
    pub source_image_id: String,
    pub grid_position: (usize, usize),
}

/// Train/test patch lists produced by a leakage-free source-image split.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<PatchRecord>,
    pub test: Vec<PatchRecord>,
    pub seed: u64,
}

impl DatasetSplit {
    /// Number of distinct classes present in the training patches.
    pub fn n_classes(&self) -> usize {
        self.train
            .iter()
            .map(|p| p.label.index)
            .collect::<std::collections::HashSet<_>>()
            .len()
    }
}
