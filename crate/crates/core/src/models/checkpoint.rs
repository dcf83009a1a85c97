//! Versioned checkpoints: a binary parameter blob plus JSON config and
//! training metadata. Save -> load -> forward is bit-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{StudentConfig, StudentModel, TeacherConfig, TeacherModel};
use crate::error::{Error, Result};
use crate::nn::Param;

const CHECKPOINT_VERSION: u32 = 1;

/// Seed, epochs run, and the recorded loss curve of a training run.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub loss_curve: Vec<(usize, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConfigEnvelope<C> {
    version: u32,
    kind: String,
    config: C,
}

/// Concatenated little-endian f32 bytes of all parameters in model order.
pub fn param_bytes(params: &[&Param]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in params {
        for v in p.value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn load_param_bytes(params: Vec<&mut Param>, bytes: &[u8]) -> Result<()> {
    let expected: usize = params.iter().map(|p| p.len() * 4).sum();
    if bytes.len() != expected {
        return Err(Error::Config(format!(
            "parameter blob has {} bytes, model expects {expected}",
            bytes.len()
        )));
    }
    let mut offset = 0;
    for p in params {
        for v in p.value.iter_mut() {
            *v = f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
            offset += 4;
        }
    }
    Ok(())
}

fn save_parts<C: Serialize>(
    stem: &Path,
    kind: &str,
    config: &C,
    params: &[&Param],
    meta: &TrainingMeta,
) -> Result<()> {
    if let Some(parent) = stem.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let envelope = ConfigEnvelope {
        version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        config,
    };
    fs::write(stem.with_extension("config.json"), serde_json::to_vec_pretty(&envelope)?)?;
    fs::write(stem.with_extension("meta.json"), serde_json::to_vec_pretty(meta)?)?;
    fs::write(stem.with_extension("params.bin"), param_bytes(params))?;
    Ok(())
}

fn load_parts<C: for<'de> Deserialize<'de>>(
    stem: &Path,
    kind: &str,
) -> Result<(C, Vec<u8>, TrainingMeta)> {
    let envelope: ConfigEnvelope<C> =
        serde_json::from_slice(&fs::read(stem.with_extension("config.json"))?)?;
    if envelope.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {}",
            envelope.version
        )));
    }
    if envelope.kind != kind {
        return Err(Error::Config(format!(
            "checkpoint kind {:?} does not match expected {kind:?}",
            envelope.kind
        )));
    }
    let meta: TrainingMeta = serde_json::from_slice(&fs::read(stem.with_extension("meta.json"))?)?;
    let bytes = fs::read(stem.with_extension("params.bin"))?;
    Ok((envelope.config, bytes, meta))
}

pub fn save_teacher(stem: &Path, model: &TeacherModel, meta: &TrainingMeta) -> Result<()> {
    save_parts(stem, "teacher", &model.config, &model.params(), meta)
}

pub fn load_teacher(stem: &Path) -> Result<(TeacherModel, TrainingMeta)> {
    let (config, bytes, meta) = load_parts::<TeacherConfig>(stem, "teacher")?;
    let mut model = TeacherModel::new(config, 0)?;
    load_param_bytes(model.params_mut(), &bytes)?;
    Ok((model, meta))
}

pub fn save_student(stem: &Path, model: &StudentModel, meta: &TrainingMeta) -> Result<()> {
    save_parts(stem, "student", &model.config, &model.params(), meta)
}

pub fn load_student(stem: &Path) -> Result<(StudentModel, TrainingMeta)> {
    let (config, bytes, meta) = load_parts::<StudentConfig>(stem, "student")?;
    let mut model = StudentModel::new(config, 0)?;
    load_param_bytes(model.params_mut(), &bytes)?;
    Ok((model, meta))
}
