//! On-disk patch store: one binary array plus a JSON sidecar per patch, a
//! split manifest listing patch ids per side, and a loader for raw image
//! trees laid out as `<root>/<view>/<class>/<files>`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{ClassLabel, ClassSet, DatasetSplit, PatchRecord, SourceImage, View};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct PatchSidecar {
    patch_id: String,
    label: ClassLabel,
    view: String,
    source_image_id: String,
    grid_position: (usize, usize),
    shape: (usize, usize, usize),
}

/// Split manifest: which patch ids belong to which side, and the seed that
/// produced the partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

fn patch_dir(root: &Path, view: View) -> PathBuf {
    root.join("patches").join(view.as_str())
}

/// Write every patch of a split under `root/patches/<view>/` and return the
/// manifest describing the partition.
pub fn write_patch_store(root: &Path, split: &DatasetSplit) -> Result<SplitManifest> {
    for patch in split.train.iter().chain(&split.test) {
        let dir = patch_dir(root, patch.view);
        fs::create_dir_all(&dir)?;
        let sidecar = PatchSidecar {
            patch_id: patch.patch_id.clone(),
            label: patch.label.clone(),
            view: patch.view.as_str().to_string(),
            source_image_id: patch.source_image_id.clone(),
            grid_position: patch.grid_position,
            shape: patch.values.dim(),
        };
        let mut bin = fs::File::create(dir.join(format!("{}.bin", patch.patch_id)))?;
        let mut bytes = Vec::with_capacity(patch.values.len() * 4);
        for v in patch.values.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bin.write_all(&bytes)?;
        let json = serde_json::to_vec_pretty(&sidecar)?;
        fs::write(dir.join(format!("{}.json", patch.patch_id)), json)?;
    }
    Ok(SplitManifest {
        seed: split.seed,
        train: split.train.iter().map(|p| p.patch_id.clone()).collect(),
        test: split.test.iter().map(|p| p.patch_id.clone()).collect(),
    })
}

pub fn write_split_manifest(path: &Path, manifest: &SplitManifest) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}

fn load_patch(root: &Path, view: View, patch_id: &str) -> Result<PatchRecord> {
    let dir = patch_dir(root, view);
    let sidecar: PatchSidecar =
        serde_json::from_slice(&fs::read(dir.join(format!("{patch_id}.json")))?)?;
    let mut bytes = Vec::new();
    fs::File::open(dir.join(format!("{patch_id}.bin")))?.read_to_end(&mut bytes)?;
    let (h, w, c) = sidecar.shape;
    if bytes.len() != h * w * c * 4 {
        return Err(Error::RejectedInput(format!(
            "patch {patch_id}: expected {} bytes, found {}",
            h * w * c * 4,
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(PatchRecord {
        patch_id: sidecar.patch_id,
        values: Array3::from_shape_vec((h, w, c), values)
            .map_err(|e| Error::RejectedInput(e.to_string()))?,
        label: sidecar.label,
        view: View::parse(&sidecar.view)?,
        source_image_id: sidecar.source_image_id,
        grid_position: sidecar.grid_position,
    })
}

/// Reload a split from a patch store given its manifest.
pub fn load_patch_store(root: &Path, view: View, manifest: &SplitManifest) -> Result<DatasetSplit> {
    let load_side = |ids: &[String]| -> Result<Vec<PatchRecord>> {
        ids.iter().map(|id| load_patch(root, view, id)).collect()
    };
    Ok(DatasetSplit {
        train: load_side(&manifest.train)?,
        test: load_side(&manifest.test)?,
        seed: manifest.seed,
    })
}

/// Load a raw dataset laid out as `<root>/<view>/<class>/<image files>`.
/// Every class directory must be present in `classes`.
pub fn load_image_tree(root: &Path, view: View, classes: &ClassSet) -> Result<Vec<SourceImage>> {
    let view_dir = root.join(view.as_str());
    if !view_dir.is_dir() {
        return Err(Error::Config(format!("missing view directory {}", view_dir.display())));
    }
    let mut out = Vec::new();
    let mut class_dirs: Vec<PathBuf> = fs::read_dir(&view_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Config(format!("no class directories under {}", view_dir.display())));
    }
    for class_dir in class_dirs {
        let class_name = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config("unreadable class directory name".into()))?
            .to_string();
        let label = classes.label_by_name(&class_name)?;
        let mut files: Vec<PathBuf> = walkdir::WalkDir::new(&class_dir)
            .max_depth(1)
            .into_iter()
            .filter_map(|e| e.ok())
            .map(|e| e.into_path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        for file in files {
            let img = image::open(&file)?.to_rgb8();
            let (w, h) = img.dimensions();
            let mut pixels = Array3::<u8>::zeros((h as usize, w as usize, 3));
            for (x, y, p) in img.enumerate_pixels() {
                for c in 0..3 {
                    pixels[[y as usize, x as usize, c]] = p.0[c];
                }
            }
            let stem = file
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image")
                .to_string();
            out.push(SourceImage::new(
                format!("{}_{}_{stem}", view.as_str(), class_name),
                pixels,
                label.clone(),
                view,
                None,
            )?);
        }
    }
    Ok(out)
}
