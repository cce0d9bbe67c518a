//! Checkpoint directories: `config.json` + `weights.safetensors`
//! (+ `optimizer.safetensors` for resumable training state).
//! Writes go to a sibling temp directory that is renamed into place.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub struct CheckpointFiles;

impl CheckpointFiles {
    pub const CONFIG: &'static str = "config.json";
    pub const WEIGHTS: &'static str = "weights.safetensors";
    pub const OPTIMIZER: &'static str = "optimizer.safetensors";
}

fn to_f32_map(tensors: &[(String, Tensor)]) -> Result<HashMap<String, Tensor>> {
    tensors
        .iter()
        .map(|(k, t)| Ok((k.clone(), t.to_dtype(DType::F32)?)))
        .collect()
}

/// Atomically writes a checkpoint directory. `tensor_files` maps file name →
/// named tensors; `extra` holds additional raw files.
pub fn save_checkpoint(
    dir: &Path,
    meta: &impl Serialize,
    tensor_files: &[(&str, &[(String, Tensor)])],
    extra: &[(&str, Vec<u8>)],
) -> Result<()> {
    let parent = dir.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&parent)?;
    let name = dir
        .file_name()
        .ok_or_else(|| Error::checkpoint(dir, "checkpoint path has no final component"))?
        .to_string_lossy()
        .into_owned();
    let tmp = parent.join(format!(".{name}.tmp{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    fs::write(tmp.join(CheckpointFiles::CONFIG), serde_json::to_vec_pretty(meta)?)?;
    for (file, tensors) in tensor_files {
        candle_core::safetensors::save(&to_f32_map(tensors)?, tmp.join(file))?;
    }
    for (file, bytes) in extra {
        fs::write(tmp.join(file), bytes)?;
    }
    if dir.exists() {
        let old = parent.join(format!(".{name}.old{}", std::process::id()));
        fs::rename(dir, &old)?;
        fs::rename(&tmp, dir)?;
        fs::remove_dir_all(&old)?;
    } else {
        fs::rename(&tmp, dir)?;
    }
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::checkpoint(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::checkpoint(path, e))
}

pub fn load_tensors(path: &Path, dtype: DType, device: &Device) -> Result<HashMap<String, Tensor>> {
    let raw = candle_core::safetensors::load(path, device).map_err(|e| Error::checkpoint(path, e))?;
    raw.into_iter()
        .map(|(k, t)| Ok((k, t.to_dtype(dtype)?)))
        .collect()
}

/// Read-only parameters: the returned builder yields plain tensors, so no
/// gradient is ever tracked for them.
pub fn load_frozen(path: &Path, dtype: DType, device: &Device) -> Result<VarBuilder<'static>> {
    Ok(VarBuilder::from_tensors(load_tensors(path, dtype, device)?, dtype, device))
}

/// Overwrites every variable of `varmap` from a safetensors file.
pub(crate) fn load_into_varmap(varmap: &VarMap, path: &Path) -> Result<()> {
    let data = varmap.data().lock().expect("var map lock");
    let device = data
        .values()
        .next()
        .map(|v| v.device().clone())
        .unwrap_or(Device::Cpu);
    let stored = candle_core::safetensors::load(path, &device).map_err(|e| Error::checkpoint(path, e))?;
    for (name, var) in data.iter() {
        let t = stored
            .get(name)
            .ok_or_else(|| Error::checkpoint(path, format!("missing tensor `{name}`")))?;
        if t.dims() != var.dims() {
            return Err(Error::checkpoint(
                path,
                format!("tensor `{name}` has shape {:?}, model expects {:?}", t.dims(), var.dims()),
            ));
        }
        var.set(&t.to_dtype(var.dtype())?)?;
    }
    Ok(())
}
