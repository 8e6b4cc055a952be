use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{InitMeta, ParamSet};
use super::{Tensor, TensorError, TensorResult};

pub const CKPT_SCHEMA: &str = "ckpt_v1";
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema: String,
    pub config_hash: String,
    pub step: u64,
    pub param_seed: u64,
    pub params: Vec<ParamEntry>,
    /// Caller-owned metadata, e.g. the model configuration.
    pub meta: serde_json::Value,
}

fn io(path: &Path, source: std::io::Error) -> TensorError {
    TensorError::Io { path: path.display().to_string(), source }
}

/// Writes `dir/manifest.json` and `dir/params.bin` (little-endian f64 in
/// manifest order).
pub fn save_checkpoint(
    dir: &Path,
    params: &ParamSet,
    step: u64,
    config_hash: &str,
    meta: serde_json::Value,
) -> TensorResult<()> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let manifest = CheckpointManifest {
        schema: CKPT_SCHEMA.to_string(),
        config_hash: config_hash.to_string(),
        step,
        param_seed: params.seed(),
        params: params
            .iter()
            .map(|(_, p)| ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), init: p.init })
            .collect(),
        meta,
    };
    let mut blob = Vec::with_capacity(params.num_scalars() * 8);
    for (_, p) in params.iter() {
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    let mp = dir.join(MANIFEST);
    fs::write(&mp, text).map_err(|e| io(&mp, e))?;
    let bp = dir.join(BLOB);
    fs::write(&bp, blob).map_err(|e| io(&bp, e))
}

pub fn load_checkpoint(dir: &Path) -> TensorResult<(CheckpointManifest, ParamSet)> {
    let mp = dir.join(MANIFEST);
    let text = fs::read_to_string(&mp).map_err(|e| io(&mp, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| TensorError::Checkpoint(format!("{}: {e}", mp.display())))?;
    if manifest.schema != CKPT_SCHEMA {
        return Err(TensorError::Checkpoint(format!("unknown schema {:?}", manifest.schema)));
    }
    let bp = dir.join(BLOB);
    let blob = fs::read(&bp).map_err(|e| io(&bp, e))?;
    let expected: usize = manifest.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if blob.len() != expected * 8 {
        return Err(TensorError::Checkpoint(format!(
            "parameter blob holds {} bytes, manifest requires {}",
            blob.len(),
            expected * 8
        )));
    }
    let mut values = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut params = ParamSet::new(manifest.param_seed);
    for entry in &manifest.params {
        let n: usize = entry.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        params.insert(&entry.name, Tensor::new(entry.shape.clone(), data)?, entry.init)?;
    }
    Ok((manifest, params))
}
