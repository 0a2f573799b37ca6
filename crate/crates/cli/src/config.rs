//! Run configuration: a flat JSON object with dotted keys layered over the
//! built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use modmoe::distill::DistillConfig;
use modmoe::model::{ModelConfig, TrainConfig};
use modmoe::moe::Setup;
use modmoe::router::ClassifierConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory holding `desk_<lang>.jsonl`.
    pub corpus_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// Fraction of each language held out for evaluation.
    pub holdout: f64,
    /// Per-language document cap before splitting; `0` keeps everything.
    pub max_docs_per_lang: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: usize,
}

/// A model shape; the vocabulary size always comes from the tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub tie_embeddings: bool,
}

impl ModelShape {
    fn of(c: ModelConfig) -> Self {
        ModelShape {
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            d_model: c.d_model,
            d_ff: c.d_ff,
            context_len: c.context_len,
            tie_embeddings: c.tie_embeddings,
        }
    }

    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            context_len: self.context_len,
            vocab_size,
            tie_embeddings: self.tie_embeddings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSection {
    pub model: ModelShape,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoeSection {
    pub setup: Setup,
    /// Comma-separated routable languages, or `none`.
    pub routable: String,
    pub use_common: bool,
    /// `trained` or `oracle`.
    pub routing: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    /// `adaptive` or a fixed alpha value per entry.
    pub alpha_settings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub corpus: CorpusSection,
    pub tokenizer: TokenizerSection,
    pub teacher: TeacherSection,
    pub student: ModelShape,
    pub distill: DistillConfig,
    pub router: ClassifierConfig,
    pub moe: MoeSection,
    pub study: StudySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths {
                corpus_dir: "data".into(),
            },
            corpus: CorpusSection {
                holdout: 0.25,
                max_docs_per_lang: 0,
            },
            tokenizer: TokenizerSection { vocab_size: 2048 },
            teacher: TeacherSection {
                model: ModelShape::of(ModelConfig::teacher(0)),
                train: TrainConfig::default(),
            },
            student: ModelShape::of(ModelConfig::student(0)),
            distill: DistillConfig::default(),
            router: ClassifierConfig::default(),
            moe: MoeSection {
                setup: Setup::MoeCe,
                routable: "en,fr,de,py".into(),
                use_common: true,
                routing: "trained".into(),
            },
            study: StudySection {
                alpha_settings: ["adaptive", "0.1", "0.3", "0.5", "0.7", "0.9"].map(String::from).to_vec(),
            },
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn unflatten(flat: BTreeMap<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("config sections are objects");
        }
        node.insert(parts[parts.len() - 1].to_string(), v);
    }
    Value::Object(root)
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

impl RunConfig {
    /// Every key accepted in a config file, in dotted form.
    pub fn keys() -> Vec<String> {
        let mut flat = BTreeMap::new();
        flatten("", &serde_json::to_value(RunConfig::default()).expect("config serializes"), &mut flat);
        flat.into_keys().collect()
    }

    /// Layers the keys of a JSON object over the defaults. Keys may be
    /// dotted (`"distill.steps": 300`) or nested; unknown keys are errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        if !v.is_object() {
            bail!("config must be a JSON object");
        }
        let mut given = BTreeMap::new();
        flatten("", &v, &mut given);
        let mut flat = BTreeMap::new();
        flatten("", &serde_json::to_value(RunConfig::default())?, &mut flat);
        for (k, v) in given {
            let slot = flat.get_mut(&k).ok_or_else(|| anyhow!("unknown config key '{k}'"))?;
            if kind(slot) != kind(&v) {
                bail!("config key '{k}' expects {}, got {}", kind(slot), kind(&v));
            }
            *slot = v;
        }
        serde_json::from_value(unflatten(flat)).map_err(|e| anyhow!("invalid config value: {e}"))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_json(&text).with_context(|| format!("config {}", p.display()))
            }
        }
    }

    /// Resolved config as dotted keys, one per line, sorted.
    pub fn to_flat_json(&self) -> String {
        let mut flat = BTreeMap::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut flat);
        serde_json::to_string_pretty(&flat).expect("config serializes")
    }

    /// SHA-256 of the resolved config in its canonical flat form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_flat_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn teacher_config(&self, vocab: usize) -> ModelConfig {
        self.teacher.model.with_vocab(vocab)
    }

    pub fn student_config(&self, vocab: usize) -> ModelConfig {
        self.student.with_vocab(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn dotted_and_nested_keys_agree() {
        let a = RunConfig::from_json(r#"{"distill.steps": 7, "distill.optimizer.lr": 0.01}"#).unwrap();
        let b = RunConfig::from_json(r#"{"distill": {"steps": 7, "optimizer": {"lr": 0.01}}}"#).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.distill.steps, 7);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_json(r#"{"distill.stepz": 3}"#).unwrap_err();
        assert_eq!(err.to_string(), "unknown config key 'distill.stepz'");
    }

    #[test]
    fn type_mismatch_is_named() {
        let err = RunConfig::from_json(r#"{"tokenizer.vocab_size": "big"}"#).unwrap_err();
        assert!(err.to_string().contains("'tokenizer.vocab_size'"), "{err}");
        let err = RunConfig::from_json(r#"{"moe.setup": "mixture"}"#).unwrap_err();
        assert!(err.to_string().starts_with("invalid config value"), "{err}");
    }

    #[test]
    fn keys_cover_every_section() {
        let keys = RunConfig::keys();
        for k in ["paths.corpus_dir", "teacher.train.accumulation", "distill.alpha_mode", "router.reg_lambda", "moe.routable"] {
            assert!(keys.iter().any(|x| x == k), "{k}");
        }
    }
}
