//! GPT-2 style decoder: learned positions, pre-norm blocks, GELU MLP and
//! an output head tied to the token embedding.

pub(crate) mod checkpoint;
mod train;

use serde::{Deserialize, Serialize};

use crate::corpus::shifted_targets;
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, AttnGeom, Float, ParamSet, Rng, Tape, Tensor, Var, IGNORE_INDEX};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use train::{
    accumulate_step, evaluate_ce, evaluate_per_lang, train_teacher, CeSum, TrainConfig, TrainLog,
};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub tie_embeddings: bool,
}

impl ModelConfig {
    pub fn teacher(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            context_len: 128,
            vocab_size,
            tie_embeddings: true,
        }
    }

    pub fn student(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 64,
            d_ff: 256,
            context_len: 128,
            vocab_size,
            tie_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.context_len < 2 {
            return Err(Error::Config(format!(
                "context_len must be at least 2, got {}",
                self.context_len
            )));
        }
        Ok(())
    }

    /// Parameter names and shapes in storage order. Without
    /// `own_embedding` the token table is expected from outside.
    pub fn layout(&self, own_embedding: bool) -> Vec<(String, Vec<usize>, bool)> {
        let (d, f, v) = (self.d_model, self.d_ff, self.vocab_size);
        let mut out = Vec::new();
        let mut p = |name: String, shape: Vec<usize>, decay: bool| out.push((name, shape, decay));
        if own_embedding {
            p("wte".into(), vec![v, d], false);
        }
        p("wpe".into(), vec![self.context_len, d], false);
        for i in 0..self.n_layers {
            p(format!("h{i}.ln1.g"), vec![d], false);
            p(format!("h{i}.ln1.b"), vec![d], false);
            p(format!("h{i}.attn.wqkv"), vec![d, 3 * d], true);
            p(format!("h{i}.attn.bqkv"), vec![3 * d], false);
            p(format!("h{i}.attn.wo"), vec![d, d], true);
            p(format!("h{i}.attn.bo"), vec![d], false);
            p(format!("h{i}.ln2.g"), vec![d], false);
            p(format!("h{i}.ln2.b"), vec![d], false);
            p(format!("h{i}.mlp.w1"), vec![d, f], true);
            p(format!("h{i}.mlp.b1"), vec![f], false);
            p(format!("h{i}.mlp.w2"), vec![f, d], true);
            p(format!("h{i}.mlp.b2"), vec![d], false);
        }
        p("lnf.g".into(), vec![d], false);
        p("lnf.b".into(), vec![d], false);
        if !self.tie_embeddings {
            p("lm_head".into(), vec![v, d], true);
        }
        out
    }

    pub fn num_params(&self, own_embedding: bool) -> usize {
        self.layout(own_embedding)
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }
}

/// Fresh token-embedding table with the model's initialization.
pub fn init_embedding<F: Float>(config: &ModelConfig, rng: &mut Rng) -> Tensor<F> {
    Tensor::randn(&[config.vocab_size, config.d_model], INIT_STD, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLM<F: Float = f32> {
    pub config: ModelConfig,
    pub params: ParamSet<F>,
}

impl<F: Float> TransformerLM<F> {
    /// Initializes weights from `N(0, 0.02²)`; residual output projections
    /// are further scaled by `1/√(2·n_layers)`. Biases start at zero and
    /// layer-norm gains at one.
    pub fn new(config: ModelConfig, own_embedding: bool, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let resid_std = INIT_STD / ((2 * config.n_layers) as f64).sqrt();
        let mut params = ParamSet::new();
        for (name, shape, decay) in config.layout(own_embedding) {
            let t = if name.ends_with(".g") {
                Tensor::full(&shape, F::one())
            } else if shape.len() == 1 {
                Tensor::zeros(&shape)
            } else if name.ends_with("attn.wo") || name.ends_with("mlp.w2") {
                Tensor::randn(&shape, resid_std, rng)
            } else {
                Tensor::randn(&shape, INIT_STD, rng)
            };
            params.push(name, t, decay);
        }
        Ok(TransformerLM { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamSet<F>) -> Result<Self> {
        config.validate()?;
        let own = params.index_of("wte").is_some();
        let layout = config.layout(own);
        if layout.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape, _), p) in layout.iter().zip(params.iter()) {
            if *name != p.name || shape.as_slice() != p.tensor.shape() {
                return Err(Error::Checkpoint {
                    name: p.name.clone(),
                    reason: format!("expected {name} with shape {shape:?}, found {:?}", p.tensor.shape()),
                });
            }
        }
        Ok(TransformerLM { config, params })
    }

    /// Whether the token table lives in this model (rather than being
    /// shared with other experts).
    pub fn owns_embedding(&self) -> bool {
        self.params.index_of("wte").is_some()
    }

    fn var(&self, vars: &[Var], name: &str) -> Var {
        vars[self.params.index_of(name).unwrap_or_else(|| panic!("missing parameter {name}"))]
    }

    /// Logits `[batch·seq × vocab]` for row-major `ids` of shape
    /// `[batch × seq]`. `vars` come from `self.params.bind`; `shared_wte`
    /// supplies the token table when the model does not own one.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        vars: &[Var],
        shared_wte: Option<Var>,
        ids: &[u32],
        batch: usize,
        seq: usize,
    ) -> Result<Var> {
        let c = &self.config;
        if seq > c.context_len {
            return Err(Error::ContextOverflow {
                len: seq,
                context_len: c.context_len,
            });
        }
        if ids.len() != batch * seq || ids.is_empty() {
            return Err(Error::shape("forward", format!("{} ids for batch {batch} × seq {seq}", ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= c.vocab_size) {
            return Err(Error::TokenOutOfRange(bad));
        }
        let wte = match (self.owns_embedding(), shared_wte) {
            (true, _) => self.var(vars, "wte"),
            (false, Some(v)) => v,
            (false, None) => {
                return Err(Error::Config("model needs a shared embedding table".into()));
            }
        };
        let tok_ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let pos_ids: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
        let tok = tape.embedding(wte, &tok_ids)?;
        let pos = tape.embedding(self.var(vars, "wpe"), &pos_ids)?;
        let mut x = tape.add(tok, pos)?;
        let d = c.d_model;
        let geom = AttnGeom {
            batch,
            seq,
            heads: c.n_heads,
            head_dim: d / c.n_heads,
        };
        for i in 0..c.n_layers {
            let p = |n: &str| self.var(vars, &format!("h{i}.{n}"));
            let h = tape.layer_norm(x, p("ln1.g"), p("ln1.b"))?;
            let qkv = tape.matmul(h, p("attn.wqkv"))?;
            let qkv = tape.add_bias(qkv, p("attn.bqkv"))?;
            let q = tape.slice_cols(qkv, 0, d)?;
            let k = tape.slice_cols(qkv, d, d)?;
            let v = tape.slice_cols(qkv, 2 * d, d)?;
            let scores = tape.causal_attention_scores(q, k, geom)?;
            let probs = tape.softmax(scores);
            let a = tape.attention_mix(probs, v, geom)?;
            let o = tape.matmul(a, p("attn.wo"))?;
            let o = tape.add_bias(o, p("attn.bo"))?;
            x = tape.add(x, o)?;
            let h = tape.layer_norm(x, p("ln2.g"), p("ln2.b"))?;
            let m = tape.matmul(h, p("mlp.w1"))?;
            let m = tape.add_bias(m, p("mlp.b1"))?;
            let m = tape.gelu(m);
            let m = tape.matmul(m, p("mlp.w2"))?;
            let m = tape.add_bias(m, p("mlp.b2"))?;
            x = tape.add(x, m)?;
        }
        let x = tape.layer_norm(x, self.var(vars, "lnf.g"), self.var(vars, "lnf.b"))?;
        let head = if c.tie_embeddings { wte } else { self.var(vars, "lm_head") };
        tape.matmul_t(x, head)
    }

    /// Inference-only logits for one batch, as a flat `[batch·seq × vocab]`
    /// buffer.
    pub fn logits(&self, shared_wte: Option<&Tensor<F>>, ids: &[u32], batch: usize, seq: usize) -> Result<Vec<F>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let shared = shared_wte.map(|t| {
            let mut t = t.clone();
            t.set_requires_grad(false);
            tape.leaf(&t)
        });
        let out = self.forward(&mut tape, &vars, shared, ids, batch, seq)?;
        Ok(tape.value(out).to_vec())
    }
}

/// Mean next-token cross-entropy over positions whose input and target are
/// both unmasked. `tokens` and `mask` are `[batch × seq]`.
pub fn lm_loss<F: Float>(
    tape: &mut Tape<F>,
    logits: Var,
    tokens: &[u32],
    mask: &[bool],
    batch: usize,
    seq: usize,
) -> Result<Var> {
    let targets = shifted_targets(tokens, mask, batch, seq);
    tape.cross_entropy(logits, &targets, IGNORE_INDEX)
}

/// Summed negative log-likelihood of each next token in `seq` under the
/// row-major `logits` (`seq × vocab`), accumulated in f64.
pub fn sequence_nll<F: Float>(logits: &[F], vocab: usize, seq: &[u32]) -> f64 {
    let mut total = 0.0;
    for t in 0..seq.len().saturating_sub(1) {
        let row = &logits[t * vocab..(t + 1) * vocab];
        let lse = log_sum_exp(row);
        total += (lse - row[seq[t + 1] as usize]).as_f64();
    }
    total
}
