use super::{slot, MoESystem, Setup};
use crate::corpus::{Batch, BatchMode, BatchStream, Lang, PerLang};
use crate::distill::{check_vocab, objective_node, teacher_logits, DistillConfig, DistillLog, MetricRow};
use crate::error::{Error, Result};
use crate::model::{init_embedding, sequence_nll, CeSum, ModelConfig, TransformerLM};
use crate::numerics::{clip_grad_norm, substream, AdamW, ParamSet, Rng, Tape, Tensor};
use crate::router::Router;

struct Member {
    model: TransformerLM<f32>,
    opt: AdamW<f32>,
    steps: usize,
}

impl Member {
    fn new(config: &ModelConfig, cfg: &DistillConfig, rng: &mut Rng) -> Result<Self> {
        let model = TransformerLM::new(*config, false, rng)?;
        let opt = AdamW::new(cfg.optimizer, &model.params);
        Ok(Member { model, opt, steps: 0 })
    }
}

/// Joint training state for JEET and MoE-CE: four experts without token
/// tables of their own, one shared table, and for MoE-CE a common expert.
///
/// A batch of language `L` trains expert `L`, the shared table and the
/// common expert; every other expert is left untouched. Each expert follows
/// its own learning-rate and alpha schedule over `cfg.steps` steps, while
/// the shared table and the common expert see all `4·cfg.steps` batches.
pub struct MoeTrainer<'t> {
    teacher: &'t TransformerLM<f32>,
    setup: Setup,
    experts: PerLang<Member>,
    common: Option<Member>,
    shared: ParamSet<f32>,
    shared_opt: AdamW<f32>,
    cfg: DistillConfig,
    global: usize,
}

impl<'t> MoeTrainer<'t> {
    /// Fresh experts from the `init/<lang>`, `init/common` and
    /// `init/shared` substreams of `seed`.
    pub fn new(
        teacher: &'t TransformerLM<f32>,
        student_config: &ModelConfig,
        setup: Setup,
        cfg: &DistillConfig,
        seed: u64,
    ) -> Result<Self> {
        if setup == Setup::Ple {
            return Err(Error::Config("ple experts are distilled independently".into()));
        }
        cfg.validate()?;
        check_vocab(&teacher.config, student_config)?;
        let mut experts = Vec::new();
        for l in Lang::ALL {
            experts.push(Member::new(student_config, cfg, &mut Rng::derive(seed, &format!("init/{l}")))?);
        }
        let experts = PerLang(experts.try_into().unwrap_or_else(|_| unreachable!()));
        let common = match setup {
            Setup::MoeCe => Some(Member::new(student_config, cfg, &mut Rng::derive(seed, "init/common"))?),
            _ => None,
        };
        let mut shared = ParamSet::new();
        shared.push("wte", init_embedding(student_config, &mut Rng::derive(seed, "init/shared")), false);
        let shared_opt = AdamW::new(cfg.optimizer, &shared);
        Ok(MoeTrainer {
            teacher,
            setup,
            experts,
            common,
            shared,
            shared_opt,
            cfg: *cfg,
            global: 0,
        })
    }

    pub fn total_steps(&self) -> usize {
        Lang::ALL.len() * self.cfg.steps
    }

    pub fn steps_taken(&self) -> usize {
        self.global
    }

    pub fn expert(&self, lang: Lang) -> &TransformerLM<f32> {
        &self.experts[lang].model
    }

    pub fn common(&self) -> Option<&TransformerLM<f32>> {
        self.common.as_ref().map(|m| &m.model)
    }

    pub fn shared_embedding(&self) -> &Tensor<f32> {
        &self.shared.get(0).tensor
    }

    /// One optimizer step on a single-language batch.
    pub fn step(&mut self, batch: &Batch) -> Result<MetricRow> {
        let lang = batch
            .lang()
            .ok_or_else(|| Error::Config("joint expert training needs single-language batches".into()))?;
        let t_logits = teacher_logits(self.teacher, batch)?;
        let (b, t) = (batch.batch_size, batch.context_len);
        let total = self.total_steps();
        let expert = &mut self.experts[lang];
        let mut tape = Tape::new();
        let shared_vars = self.shared.bind(&mut tape, true);
        let wte = Some(shared_vars[0]);
        let e_vars = expert.model.params.bind(&mut tape, true);
        let mut logits = expert.model.forward(&mut tape, &e_vars, wte, &batch.tokens, b, t)?;
        let mut c_vars = Vec::new();
        if let Some(c) = &self.common {
            c_vars = c.model.params.bind(&mut tape, true);
            let c_logits = c.model.forward(&mut tape, &c_vars, wte, &batch.tokens, b, t)?;
            let sum = tape.add(c_logits, logits)?;
            logits = tape.scale(sum, 0.5);
        }
        let (obj, [lm, kd, tot, alpha]) =
            objective_node(&mut tape, &self.cfg, expert.steps, self.cfg.steps, logits, &t_logits, batch)?;
        if !tot.is_finite() {
            return Err(Error::Diverged {
                step: self.global,
                loss: f64::from(tot),
            });
        }
        tape.backward(obj)?;
        expert.model.params.accumulate_grads(&tape, &e_vars)?;
        self.shared.accumulate_grads(&tape, &shared_vars)?;
        let max_norm = self.cfg.optimizer.max_grad_norm;
        match &mut self.common {
            Some(c) => {
                c.model.params.accumulate_grads(&tape, &c_vars)?;
                clip_grad_norm(&mut [&mut expert.model.params, &mut c.model.params, &mut self.shared], max_norm)?;
            }
            None => {
                clip_grad_norm(&mut [&mut expert.model.params, &mut self.shared], max_norm)?;
            }
        }
        let opt = self.cfg.optimizer;
        expert.opt.step(&mut expert.model.params, opt.lr_at(expert.steps, self.cfg.steps))?;
        expert.steps += 1;
        if let Some(c) = &mut self.common {
            c.opt.step(&mut c.model.params, opt.lr_at(self.global, total))?;
            c.steps += 1;
        }
        self.shared_opt.step(&mut self.shared, opt.lr_at(self.global, total))?;
        self.global += 1;
        Ok(MetricRow {
            step: self.global - 1,
            loss_lm: lm,
            loss_kd: kd,
            loss_total: tot,
            alpha,
            phase_lang: lang.code().to_string(),
        })
    }

    /// Validation cross-entropy of each expert on its own language, with
    /// the common expert mixed in when present.
    pub fn evaluate(&self, eval: &PerLang<Vec<Vec<u32>>>, limit: usize) -> Result<PerLang<Option<f64>>> {
        let shared = Some(self.shared_embedding());
        let vocab = self.teacher.config.vocab_size;
        let mut out = PerLang::default();
        for l in Lang::ALL {
            let seqs = &eval[l];
            if seqs.is_empty() {
                continue;
            }
            let take = if limit == 0 { seqs.len() } else { limit.min(seqs.len()) };
            let mut sum = CeSum::default();
            for s in &seqs[..take] {
                let mut logits = self.experts[l].model.logits(shared, s, 1, s.len())?;
                if let Some(c) = &self.common {
                    logits = super::combine(&c.model.logits(shared, s, 1, s.len())?, &logits)?;
                }
                sum.add(CeSum {
                    nll: sequence_nll(&logits, vocab, s),
                    tokens: s.len() - 1,
                });
            }
            out[l] = Some(sum.mean());
        }
        Ok(out)
    }

    /// Runs the full schedule from `stream`, which must yield one language
    /// per batch. Evaluates after every `eval_every` steps per expert and
    /// at the end.
    pub fn run(&mut self, stream: &mut BatchStream, eval: &PerLang<Vec<Vec<u32>>>, log: &mut DistillLog) -> Result<()> {
        let total = self.total_steps();
        let every = self.cfg.eval_every * Lang::ALL.len();
        while self.global < total {
            let batch = stream.next_batch();
            log.rows.push(self.step(&batch)?);
            let done = self.global;
            if (every > 0 && done % every == 0) || done == total {
                for (l, ce) in self.evaluate(eval, self.cfg.eval_sequences)?.iter() {
                    if let Some(ce) = ce {
                        log.evals.push((done, l, *ce));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn into_system(self, router: Option<Router>) -> Result<MoESystem> {
        let slots: Vec<_> = (self.experts.0.into_iter().zip(Lang::ALL))
            .map(|(m, l)| slot(Some(l), m.model, false))
            .collect();
        let experts = PerLang(slots.try_into().expect("four experts"));
        let common = self.common.map(|c| slot(None, c.model, false));
        let mut shared = self.shared.get(0).tensor.clone();
        shared.set_requires_grad(false);
        MoESystem::new(self.setup, experts, common, Some(shared), router)
    }
}

fn joint(
    setup: Setup,
    teacher: &TransformerLM<f32>,
    student_config: &ModelConfig,
    train: &PerLang<Vec<Vec<u32>>>,
    eval: &PerLang<Vec<Vec<u32>>>,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<(MoESystem, DistillLog)> {
    let missing: Vec<Lang> = Lang::ALL.into_iter().filter(|&l| train[l].is_empty()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingLanguages(missing));
    }
    let mut trainer = MoeTrainer::new(teacher, student_config, setup, cfg, seed)?;
    let mut stream = BatchStream::new(
        train.clone(),
        student_config.context_len,
        cfg.batch_size,
        BatchMode::PerLanguage,
        substream(seed, "batching"),
    )?;
    let mut log = DistillLog::default();
    trainer.run(&mut stream, eval, &mut log)?;
    Ok((trainer.into_system(None)?, log))
}

/// Trains four experts concurrently around one shared token table, one
/// language batch at a time in seed-shuffled round-robin order.
pub fn train_jeet(
    teacher: &TransformerLM<f32>,
    student_config: &ModelConfig,
    train: &PerLang<Vec<Vec<u32>>>,
    eval: &PerLang<Vec<Vec<u32>>>,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<(MoESystem, DistillLog)> {
    joint(Setup::Jeet, teacher, student_config, train, eval, cfg, seed)
}

/// As [`train_jeet`] plus a common expert that takes part in every batch.
/// The distillation objective is applied to the mean of the routed and
/// common experts' logits, the same combination used at inference.
pub fn train_moe_ce(
    teacher: &TransformerLM<f32>,
    student_config: &ModelConfig,
    train: &PerLang<Vec<Vec<u32>>>,
    eval: &PerLang<Vec<Vec<u32>>>,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<(MoESystem, DistillLog)> {
    joint(Setup::MoeCe, teacher, student_config, train, eval, cfg, seed)
}
