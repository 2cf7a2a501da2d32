//! Model checkpoints: one TNSR file per parameter plus a JSON manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{AdapterConfig, ModelConfig};
use crate::data::{read_tensor, write_tensor};
use crate::error::{Error, Result};
use crate::model::FlowDit;
use crate::params::ParamMap;

pub const MANIFEST: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub step: u64,
    pub model: ModelConfig,
    pub adapter: AdapterConfig,
    pub audio_dim: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(dir: &Path, model: &FlowDit, step: u64) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut tensors = Vec::with_capacity(model.params.len());
    for (name, t) in &model.params {
        let file = format!("{name}.tnsr");
        write_tensor(dir.join(&file), t)?;
        tensors.push(TensorEntry {
            name: name.clone(),
            file,
            shape: t.shape().to_vec(),
        });
    }
    let manifest = CheckpointManifest {
        step,
        model: model.model.clone(),
        adapter: model.adapter.clone(),
        audio_dim: model.audio_dim,
        tensors,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(FlowDit, CheckpointManifest)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let mut params = ParamMap::new();
    for entry in &manifest.tensors {
        let t = read_tensor(dir.join(&entry.file))?;
        if t.shape() != entry.shape {
            return Err(Error::Format {
                offset: 0,
                detail: format!("{} has shape {:?}, manifest says {:?}", entry.file, t.shape(), entry.shape),
            });
        }
        params.insert(entry.name.clone(), t);
    }
    let model = FlowDit {
        model: manifest.model.clone(),
        adapter: manifest.adapter.clone(),
        audio_dim: manifest.audio_dim,
        params,
    };
    Ok((model, manifest))
}
