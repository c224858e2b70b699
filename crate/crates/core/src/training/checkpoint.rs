//! Checkpoint directories: `manifest.json` plus one tensor file per
//! parameter and per Adam moment.

use std::collections::BTreeMap;
use std::path::Path;

use aligned_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::optimizer::OptimizerState;
use crate::encoders::{ModelParams, NetworkSpec};
use crate::error::{CoreError, IoContext, Result};

pub const CHECKPOINT_MANIFEST: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

/// Parameters and optimizer state at a given step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    format: u32,
    step: u64,
    spec: NetworkSpec,
    params: Vec<BlobEntry>,
    first_moments: Vec<BlobEntry>,
    second_moments: Vec<BlobEntry>,
}

fn write_blobs(dir: &Path, prefix: &str, tensors: &BTreeMap<&str, &Tensor>) -> Result<Vec<BlobEntry>> {
    tensors
        .iter()
        .map(|(name, t)| {
            let file = format!("{prefix}{name}.tnsr");
            let path = dir.join(&file);
            t.save(&path)
                .map_err(|e| CoreError::data(format!("{}: {e}", path.display())))?;
            Ok(BlobEntry {
                name: name.to_string(),
                file,
                shape: t.shape().to_vec(),
            })
        })
        .collect()
}

fn read_blobs(dir: &Path, entries: &[BlobEntry]) -> Result<BTreeMap<String, Tensor>> {
    entries
        .iter()
        .map(|e| {
            let path = dir.join(&e.file);
            if !path.exists() {
                return Err(CoreError::io(
                    &path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, format!("missing blob for {}", e.name)),
                ));
            }
            let t = Tensor::load(&path)
                .map_err(|err| CoreError::data(format!("blob {} ({}): {err}", e.name, path.display())))?;
            if t.shape() != e.shape.as_slice() {
                return Err(CoreError::data(format!(
                    "blob {} has shape {:?}, manifest says {:?}",
                    e.name,
                    t.shape(),
                    e.shape
                )));
            }
            Ok((e.name.clone(), t))
        })
        .collect()
}

pub fn save_checkpoint(dir: &Path, state: &TrainState) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    let params: BTreeMap<&str, &Tensor> = state.params.iter().collect();
    let first: BTreeMap<&str, &Tensor> = state.optimizer.first.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let second: BTreeMap<&str, &Tensor> = state.optimizer.second.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let manifest = CheckpointManifest {
        format: FORMAT_VERSION,
        step: state.optimizer.step,
        spec: state.params.spec().clone(),
        params: write_blobs(dir, "", &params)?,
        first_moments: write_blobs(dir, "adam_m.", &first)?,
        second_moments: write_blobs(dir, "adam_v.", &second)?,
    };
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).at(&path)
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainState> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = std::fs::read_to_string(&path).at(&path)?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| CoreError::data(format!("{}: corrupt checkpoint manifest: {e}", path.display())))?;
    if manifest.format != FORMAT_VERSION {
        return Err(CoreError::data(format!(
            "{}: unsupported checkpoint format {}",
            path.display(),
            manifest.format
        )));
    }
    let tensors = read_blobs(dir, &manifest.params)?;
    let params = ModelParams::from_tensors(manifest.spec, tensors)
        .map_err(|e| CoreError::data(format!("{}: {e}", dir.display())))?;
    let first = read_blobs(dir, &manifest.first_moments)?;
    let second = read_blobs(dir, &manifest.second_moments)?;
    for (name, m) in first.iter().chain(&second) {
        match params.get(name) {
            Some(p) if p.shape() == m.shape() => {}
            _ => {
                return Err(CoreError::data(format!(
                    "optimizer moment {name} does not match any parameter"
                )))
            }
        }
    }
    Ok(TrainState {
        params,
        optimizer: OptimizerState {
            step: manifest.step,
            first,
            second,
        },
    })
}

/// Loads a checkpoint and checks every tensor against `spec`, naming the
/// first tensor that is missing or misshapen.
pub fn load_checkpoint_for(dir: &Path, spec: &NetworkSpec) -> Result<TrainState> {
    let state = load_checkpoint(dir)?;
    for (name, shape) in spec.param_shapes()? {
        match state.params.get(&name) {
            None => return Err(CoreError::config(format!("checkpoint lacks tensor {name}"))),
            Some(t) if t.shape() != shape.as_slice() => {
                return Err(CoreError::config(format!(
                    "tensor {name} has shape {:?} in the checkpoint, spec expects {shape:?}",
                    t.shape()
                )))
            }
            _ => {}
        }
    }
    Ok(state)
}
