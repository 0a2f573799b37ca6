//! Sequence-routed mixtures of per-language experts.
//!
//! Three wirings are supported: independently distilled frozen experts
//! (PLE), experts trained together around one shared token table (JEET),
//! and JEET plus a common expert whose logits are averaged with the routed
//! expert's (MoE-CE).

mod bundle;
mod train;

use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use bundle::{load_bundle, save_bundle};
pub use train::{train_jeet, train_moe_ce, MoeTrainer};

use crate::corpus::{Lang, PerLang};
use crate::error::{Error, Result};
use crate::model::{sequence_nll, CeSum, ModelConfig, TransformerLM};
use crate::numerics::{ParamSet, Tensor};
use crate::router::{route_prediction, Route, Router, CLASSES};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setup {
    #[serde(rename = "ple")]
    Ple,
    #[serde(rename = "jeet")]
    Jeet,
    #[serde(rename = "moe-ce")]
    MoeCe,
}

impl Setup {
    pub fn name(self) -> &'static str {
        match self {
            Setup::Ple => "ple",
            Setup::Jeet => "jeet",
            Setup::MoeCe => "moe-ce",
        }
    }

    fn has_shared_embedding(self) -> bool {
        self != Setup::Ple
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setup {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ple" => Ok(Setup::Ple),
            "jeet" => Ok(Setup::Jeet),
            "moe-ce" => Ok(Setup::MoeCe),
            other => Err(format!("unknown setup '{other}' (expected ple, jeet or moe-ce)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Owned,
    Shared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertSlot {
    /// `None` for the common expert.
    pub lang: Option<Lang>,
    pub model: TransformerLM<f32>,
    pub frozen: bool,
    pub embedding: EmbeddingSource,
}

/// Which experts may serve at inference time.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InferenceSettings {
    pub routable: Vec<Lang>,
    pub use_common: bool,
}

impl InferenceSettings {
    pub fn full(use_common: bool) -> Self {
        InferenceSettings {
            routable: Lang::ALL.to_vec(),
            use_common,
        }
    }

    /// Routable set rendered as `en+py`, or `none`.
    pub fn routable_label(&self) -> String {
        if self.routable.is_empty() {
            return "none".into();
        }
        let mut langs = self.routable.clone();
        langs.sort();
        langs.iter().map(|l| l.code()).collect::<Vec<_>>().join("+")
    }

    /// Parses a comma-separated routable list; `none` or an empty string
    /// is the empty set.
    pub fn parse_routable(s: &str) -> Result<Vec<Lang>> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for part in s.split([',', '+']) {
            let l: Lang = part
                .trim()
                .parse()
                .map_err(|v| Error::Config(format!("unknown language '{v}' in routable set")))?;
            if !out.contains(&l) {
                out.push(l);
            }
        }
        out.sort();
        Ok(out)
    }
}

/// The routable subsets compared in the common-expert study: the full set,
/// each natural language paired with Python, and every singleton, each with
/// and without the common expert, followed by the common expert alone.
pub fn standard_grid() -> Vec<InferenceSettings> {
    use Lang::*;
    let subsets: [&[Lang]; 8] = [&[En, Fr, De, Py], &[En, Py], &[Fr, Py], &[De, Py], &[En], &[Fr], &[De], &[Py]];
    let mut grid = Vec::new();
    for s in subsets {
        for use_common in [true, false] {
            grid.push(InferenceSettings {
                routable: s.to_vec(),
                use_common,
            });
        }
    }
    grid.push(InferenceSettings {
        routable: Vec::new(),
        use_common: true,
    });
    grid
}

/// Elementwise mean of two logit buffers.
pub fn combine(a: &[f32], b: &[f32]) -> Result<Vec<f32>> {
    if a.len() != b.len() {
        return Err(Error::shape("combine", format!("{} vs {} logits", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x + y) * 0.5).collect())
}

/// How sequences find their expert.
#[derive(Debug, Clone, Copy)]
pub enum Routing<'a> {
    /// Every sequence is routed to its true language.
    Oracle,
    /// The system's router classifies the decoded text.
    Trained(&'a Tokenizer),
}

/// The model (or pair of models) that produced a sequence's logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Server {
    Expert(Lang),
    Common,
    /// Mean of the expert's and the common expert's logits.
    Combined(Lang),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Served {
    pub route: Route,
    pub server: Server,
    /// `[len × vocab]` logits.
    pub logits: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoESystem {
    setup: Setup,
    experts: PerLang<ExpertSlot>,
    common: Option<ExpertSlot>,
    shared_embedding: Option<Tensor<f32>>,
    router: Option<Router>,
    pub settings: InferenceSettings,
}

fn slot(lang: Option<Lang>, model: TransformerLM<f32>, frozen: bool) -> ExpertSlot {
    let embedding = if model.owns_embedding() {
        EmbeddingSource::Owned
    } else {
        EmbeddingSource::Shared
    };
    ExpertSlot {
        lang,
        model,
        frozen,
        embedding,
    }
}

/// Assembles independently distilled students into a PLE system. The
/// experts are frozen from here on.
pub fn build_ple(students: PerLang<TransformerLM<f32>>, router: Option<Router>) -> Result<MoESystem> {
    let experts = PerLang::from_fn(|l| slot(Some(l), students[l].clone(), true));
    MoESystem::new(Setup::Ple, experts, None, None, router)
}

impl MoESystem {
    /// Checks the wiring invariants of `setup`: PLE experts own their
    /// embeddings and there is no common expert; JEET and MoE-CE experts
    /// read one shared table, and only MoE-CE has a common expert.
    pub fn new(
        setup: Setup,
        experts: PerLang<ExpertSlot>,
        common: Option<ExpertSlot>,
        shared_embedding: Option<Tensor<f32>>,
        router: Option<Router>,
    ) -> Result<Self> {
        let vocab = experts[Lang::En].model.config.vocab_size;
        let want_shared = setup.has_shared_embedding();
        if shared_embedding.is_some() != want_shared {
            return Err(Error::Config(format!(
                "{setup} {} a shared embedding",
                if want_shared { "needs" } else { "must not have" }
            )));
        }
        if common.is_some() != (setup == Setup::MoeCe) {
            return Err(Error::Config(format!(
                "{setup} {} a common expert",
                if setup == Setup::MoeCe { "needs" } else { "must not have" }
            )));
        }
        let source = if want_shared {
            EmbeddingSource::Shared
        } else {
            EmbeddingSource::Owned
        };
        for (l, s) in experts.iter() {
            if s.lang != Some(l) {
                return Err(Error::Config(format!("expert slot {l} holds {:?}", s.lang)));
            }
        }
        for s in experts.0.iter().chain(common.iter()) {
            if s.model.config.vocab_size != vocab {
                return Err(Error::VocabMismatch(vocab, s.model.config.vocab_size));
            }
            let owned = s.model.owns_embedding();
            if owned != (source == EmbeddingSource::Owned) || s.embedding != source {
                return Err(Error::Config(format!("{setup} expert embedding must be {source:?}")));
            }
        }
        if let Some(t) = &shared_embedding {
            let d = experts[Lang::En].model.config.d_model;
            if t.shape() != [vocab, d] {
                return Err(Error::shape("shared embedding", format!("{:?}, expected [{vocab}, {d}]", t.shape())));
            }
        }
        Ok(MoESystem {
            setup,
            experts,
            common,
            shared_embedding,
            router,
            settings: InferenceSettings::full(setup == Setup::MoeCe),
        })
    }

    pub fn setup(&self) -> Setup {
        self.setup
    }

    pub fn expert(&self, lang: Lang) -> &ExpertSlot {
        &self.experts[lang]
    }

    pub fn common(&self) -> Option<&ExpertSlot> {
        self.common.as_ref()
    }

    pub fn shared_embedding(&self) -> Option<&Tensor<f32>> {
        self.shared_embedding.as_ref()
    }

    pub fn router(&self) -> Option<&Router> {
        self.router.as_ref()
    }

    pub fn set_router(&mut self, router: Router) {
        self.router = Some(router);
    }

    pub fn vocab_size(&self) -> usize {
        self.experts[Lang::En].model.config.vocab_size
    }

    pub fn model_config(&self) -> ModelConfig {
        self.experts[Lang::En].model.config
    }

    fn check_settings(&self, s: &InferenceSettings) -> Result<()> {
        if s.use_common && self.common.is_none() {
            return Err(Error::Config(format!("{} has no common expert", self.setup)));
        }
        if s.routable.is_empty() && !s.use_common {
            return Err(Error::NothingRoutable);
        }
        Ok(())
    }

    /// Class decision for one sequence: the true language under oracle
    /// routing, else the router's prediction on the decoded text.
    fn classify(&self, seq: &[u32], truth: Option<Lang>, routing: Routing) -> Result<(Lang, [f64; CLASSES])> {
        match routing {
            Routing::Oracle => {
                let l = truth.ok_or_else(|| Error::Config("oracle routing needs the true language".into()))?;
                let mut p = [0.0; CLASSES];
                p[l.index()] = 1.0;
                Ok((l, p))
            }
            Routing::Trained(tok) => {
                let router = self
                    .router
                    .as_ref()
                    .ok_or_else(|| Error::Config("system has no trained router".into()))?;
                Ok(router.predict(&tok.decode(seq)?))
            }
        }
    }

    fn server_for(&self, route: Route, s: &InferenceSettings) -> Server {
        match route {
            Route::Common => Server::Common,
            Route::Expert(l) if s.use_common && self.common.is_some() => Server::Combined(l),
            Route::Expert(l) => Server::Expert(l),
        }
    }

    fn decide(
        &self,
        seq: &[u32],
        truth: Option<Lang>,
        s: &InferenceSettings,
        routing: Routing,
    ) -> Result<(Route, Server)> {
        let (pred, probs) = self.classify(seq, truth, routing)?;
        let route = route_prediction(pred, &probs, &s.routable, s.use_common && self.common.is_some())?;
        Ok((route, self.server_for(route, s)))
    }

    /// Logits of `server` for one sequence.
    pub fn serve(&self, server: Server, seq: &[u32]) -> Result<Vec<f32>> {
        let shared = self.shared_embedding.as_ref();
        let common = || {
            self.common
                .as_ref()
                .ok_or_else(|| Error::Config(format!("{} has no common expert", self.setup)))
        };
        match server {
            Server::Expert(l) => self.experts[l].model.logits(shared, seq, 1, seq.len()),
            Server::Common => common()?.model.logits(shared, seq, 1, seq.len()),
            Server::Combined(l) => {
                let e = self.experts[l].model.logits(shared, seq, 1, seq.len())?;
                let c = common()?.model.logits(shared, seq, 1, seq.len())?;
                combine(&c, &e)
            }
        }
    }

    /// Routes and serves each sequence of a mixed-language batch under the
    /// system's current settings. `truth` is only read by oracle routing.
    pub fn infer(&self, seqs: &[Vec<u32>], truth: Option<&[Lang]>, routing: Routing) -> Result<Vec<Served>> {
        self.check_settings(&self.settings)?;
        if let Some(t) = truth {
            if t.len() != seqs.len() {
                return Err(Error::shape("moe_infer", format!("{} sequences, {} labels", seqs.len(), t.len())));
            }
        }
        let mut out = Vec::with_capacity(seqs.len());
        for (i, seq) in seqs.iter().enumerate() {
            let (route, server) = self.decide(seq, truth.map(|t| t[i]), &self.settings, routing)?;
            out.push(Served {
                route,
                server,
                logits: self.serve(server, seq)?,
            });
        }
        Ok(out)
    }

    /// Token-weighted cross-entropy per language under the current
    /// settings, over at most `limit` sequences per language (`0` = all).
    pub fn evaluate(
        &self,
        eval: &PerLang<Vec<Vec<u32>>>,
        routing: Routing,
        limit: usize,
    ) -> Result<PerLang<Option<CeSum>>> {
        let rows = self.evaluate_grid(eval, std::slice::from_ref(&self.settings), routing, limit)?;
        Ok(rows.into_iter().next().expect("one row per setting").ce)
    }

    /// Evaluates every setting of `grid`. Each sequence is classified once
    /// and each distinct server runs at most once per sequence.
    pub fn evaluate_grid(
        &self,
        eval: &PerLang<Vec<Vec<u32>>>,
        grid: &[InferenceSettings],
        routing: Routing,
        limit: usize,
    ) -> Result<Vec<GridRow>> {
        for s in grid {
            self.check_settings(s)?;
        }
        let vocab = self.vocab_size();
        let mut sums: Vec<PerLang<Option<CeSum>>> = vec![PerLang::default(); grid.len()];
        for l in Lang::ALL {
            let seqs = &eval[l];
            let take = if limit == 0 { seqs.len() } else { limit.min(seqs.len()) };
            for seq in &seqs[..take] {
                let (pred, probs) = self.classify(seq, Some(l), routing)?;
                let mut cache: HashMap<Server, f64> = HashMap::new();
                for (s, sum) in grid.iter().zip(sums.iter_mut()) {
                    let route =
                        route_prediction(pred, &probs, &s.routable, s.use_common && self.common.is_some())?;
                    let server = self.server_for(route, s);
                    let nll = match cache.get(&server) {
                        Some(v) => *v,
                        None => {
                            let v = sequence_nll(&self.serve(server, seq)?, vocab, seq);
                            cache.insert(server, v);
                            v
                        }
                    };
                    sum[l].get_or_insert_with(CeSum::default).add(CeSum {
                        nll,
                        tokens: seq.len() - 1,
                    });
                }
            }
        }
        Ok(grid.iter().cloned().zip(sums).map(|(settings, ce)| GridRow { settings, ce }).collect())
    }
}

/// One evaluated inference setting.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub settings: InferenceSettings,
    pub ce: PerLang<Option<CeSum>>,
}

impl GridRow {
    pub fn perplexity(&self, l: Lang) -> Option<f64> {
        self.ce[l].map(|c| c.mean().exp())
    }

    /// Plain mean of the per-language perplexities present.
    pub fn overall(&self) -> Option<f64> {
        let ppls: Vec<f64> = Lang::ALL.iter().filter_map(|&l| self.perplexity(l)).collect();
        (!ppls.is_empty()).then(|| ppls.iter().sum::<f64>() / ppls.len() as f64)
    }
}

/// `routable,use_common,ppl_en,ppl_fr,ppl_de,ppl_py,ppl_all`.
pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::from("routable,use_common,ppl_en,ppl_fr,ppl_de,ppl_py,ppl_all\n");
    let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
    for r in rows {
        s.push_str(&format!("{},{}", r.settings.routable_label(), r.settings.use_common));
        for l in Lang::ALL {
            s.push_str(&format!(",{}", cell(r.perplexity(l))));
        }
        s.push_str(&format!(",{}\n", cell(r.overall())));
    }
    s
}

/// Stable digest of a parameter set's names, shapes and value bits.
pub fn fingerprint(params: &ParamSet<f32>) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for p in params.iter() {
        p.name.hash(&mut h);
        p.tensor.shape().hash(&mut h);
        for v in p.tensor.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}
