//! MoE bundle directories: one checkpoint per expert, the shared token
//! table where the setup has one, the router, and `bundle.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{slot, MoESystem, Setup};
use crate::corpus::{Lang, PerLang};
use crate::error::{Error, Result};
use crate::model::checkpoint::{read_params, write_params, TensorEntry};
use crate::model::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::numerics::ParamSet;
use crate::router::Router;

const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "bundle.json";
const SHARED_DIR: &str = "shared_embedding";
const ROUTER_FILE: &str = "router.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleManifest {
    version: u32,
    setup: Setup,
    class_order: Vec<Lang>,
    /// Path of the tokenizer the experts were trained with, as given.
    tokenizer: Option<String>,
    experts: Vec<String>,
    common: Option<String>,
    shared_embedding: Option<Vec<TensorEntry>>,
    router: Option<String>,
}

fn expert_dir(l: Lang) -> String {
    format!("expert_{l}")
}

pub fn save_bundle(system: &MoESystem, dir: &Path, tokenizer: Option<&Path>, meta: CheckpointMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for l in Lang::ALL {
        save_checkpoint(&system.expert(l).model, meta, &dir.join(expert_dir(l)))?;
    }
    if let Some(c) = system.common() {
        save_checkpoint(&c.model, meta, &dir.join("common"))?;
    }
    let shared_embedding = match system.shared_embedding() {
        Some(t) => {
            let mut set = ParamSet::new();
            set.push("wte", t.clone(), false);
            Some(write_params(&dir.join(SHARED_DIR), &set)?)
        }
        None => None,
    };
    if let Some(r) = system.router() {
        r.save(&dir.join(ROUTER_FILE))?;
    }
    let manifest = BundleManifest {
        version: FORMAT_VERSION,
        setup: system.setup(),
        class_order: Lang::ALL.to_vec(),
        tokenizer: tokenizer.map(|p| p.display().to_string()),
        experts: Lang::ALL.iter().map(|&l| expert_dir(l)).collect(),
        common: system.common().map(|_| "common".to_string()),
        shared_embedding,
        router: system.router().map(|_| ROUTER_FILE.to_string()),
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Loads a bundle and the tokenizer path recorded in it.
pub fn load_bundle(dir: &Path) -> Result<(MoESystem, Option<String>)> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: BundleManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if m.version != FORMAT_VERSION || m.class_order != Lang::ALL || m.experts.len() != Lang::ALL.len() {
        return Err(Error::Checkpoint {
            name: MANIFEST.into(),
            reason: format!("unsupported bundle (version {}, classes {:?})", m.version, m.class_order),
        });
    }
    let frozen = m.setup == Setup::Ple;
    let mut slots = Vec::new();
    for (l, sub) in Lang::ALL.into_iter().zip(&m.experts) {
        slots.push(slot(Some(l), load_checkpoint(&dir.join(sub))?.0, frozen));
    }
    let experts = PerLang(slots.try_into().expect("four experts"));
    let common = match &m.common {
        Some(sub) => Some(slot(None, load_checkpoint(&dir.join(sub))?.0, false)),
        None => None,
    };
    let shared = match &m.shared_embedding {
        Some(entries) => {
            let set = read_params(&dir.join(SHARED_DIR), entries)?;
            if set.len() != 1 {
                return Err(Error::Checkpoint {
                    name: SHARED_DIR.into(),
                    reason: format!("expected one tensor, found {}", set.len()),
                });
            }
            let mut t = set.get(0).tensor.clone();
            t.set_requires_grad(false);
            Some(t)
        }
        None => None,
    };
    let router = match &m.router {
        Some(f) => Some(Router::load(&dir.join(f))?),
        None => None,
    };
    Ok((MoESystem::new(m.setup, experts, common, shared, router)?, m.tokenizer))
}
