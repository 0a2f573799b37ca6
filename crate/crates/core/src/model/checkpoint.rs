//! Checkpoint directories: `manifest.json` plus a little-endian f32 blob
//! `params.bin` holding every tensor back to back.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, TransformerLM};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

const FORMAT_VERSION: u32 = 1;
pub(crate) const MANIFEST: &str = "manifest.json";
pub(crate) const BLOB: &str = "params.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    pub decay: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    seed: u64,
    step: usize,
    tensors: Vec<TensorEntry>,
}

pub(crate) fn write_params(dir: &Path, params: &ParamSet<f32>) -> Result<Vec<TensorEntry>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::with_capacity(params.num_values() * 4);
    let mut entries = Vec::new();
    for p in params.iter() {
        entries.push(TensorEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            offset: blob.len(),
            decay: p.decay,
        });
        for v in p.tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let path = dir.join(BLOB);
    std::fs::write(&path, blob).map_err(|e| Error::io(&path, e))?;
    Ok(entries)
}

pub(crate) fn read_params(dir: &Path, entries: &[TensorEntry]) -> Result<ParamSet<f32>> {
    let path = dir.join(BLOB);
    let blob = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut params = ParamSet::new();
    let mut expected_offset = 0;
    for e in entries {
        let bad = |reason: String| Error::Checkpoint {
            name: e.name.clone(),
            reason,
        };
        let n: usize = e.shape.iter().product();
        if e.offset != expected_offset {
            return Err(bad(format!("offset {} but previous tensor ends at {expected_offset}", e.offset)));
        }
        let end = e.offset + n * 4;
        if n == 0 || end > blob.len() {
            return Err(bad(format!("shape {:?} does not fit the {}-byte blob", e.shape, blob.len())));
        }
        let data = blob[e.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| bad(err.to_string()))?;
        params.push(e.name.clone(), t, e.decay);
        expected_offset = end;
    }
    if expected_offset != blob.len() {
        return Err(Error::Checkpoint {
            name: BLOB.into(),
            reason: format!("{} trailing bytes", blob.len() - expected_offset),
        });
    }
    Ok(params)
}

pub fn save_checkpoint(model: &TransformerLM<f32>, meta: CheckpointMeta, dir: &Path) -> Result<()> {
    let tensors = write_params(dir, &model.params)?;
    let manifest = Manifest {
        version: FORMAT_VERSION,
        config: model.config,
        seed: meta.seed,
        step: meta.step,
        tensors,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Loads a checkpoint, checking every tensor against the layout its config
/// implies.
pub fn load_checkpoint(dir: &Path) -> Result<(TransformerLM<f32>, CheckpointMeta)> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if m.version != FORMAT_VERSION {
        return Err(Error::Checkpoint {
            name: MANIFEST.into(),
            reason: format!("unsupported version {}", m.version),
        });
    }
    let own = m.tensors.first().is_some_and(|t| t.name == "wte");
    let layout = m.config.layout(own);
    for (i, (name, shape, _)) in layout.iter().enumerate() {
        match m.tensors.get(i) {
            Some(e) if e.name == *name && e.shape == *shape => {}
            Some(e) if e.name == *name => {
                return Err(Error::Checkpoint {
                    name: name.clone(),
                    reason: format!("shape {:?} does not match config shape {shape:?}", e.shape),
                })
            }
            _ => {
                return Err(Error::Checkpoint {
                    name: name.clone(),
                    reason: "missing from manifest".into(),
                })
            }
        }
    }
    if let Some(extra) = m.tensors.get(layout.len()) {
        return Err(Error::Checkpoint {
            name: extra.name.clone(),
            reason: "not part of the model".into(),
        });
    }
    let params = read_params(dir, &m.tensors)?;
    let model = TransformerLM::from_params(m.config, params)?;
    Ok((
        model,
        CheckpointMeta {
            seed: m.seed,
            step: m.step,
        },
    ))
}
