//! Teacher-to-student distillation with a word-level reverse-KL term.
//!
//! The per-step objective mixes the student's own next-token loss with
//! `KL(q_student ‖ p_teacher)` at every position, either as the weighted
//! sum `α·lm + (1−α)·kd` or by alternating between the two terms.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Batch, BatchMode, BatchStream, Lang, PerLang};
use crate::error::{Error, Result};
use crate::model::{evaluate_per_lang, lm_loss, ModelConfig, TransformerLM};
use crate::numerics::{clip_grad_norm, mix, substream, AdamW, AdamWConfig, Float, Rng, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    Fixed,
    /// Linear ramp from `alpha_start` to `alpha_end` over the run.
    Adaptive,
}

impl FromStr for AlphaMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fixed" => Ok(AlphaMode::Fixed),
            "adaptive" => Ok(AlphaMode::Adaptive),
            other => Err(format!("unknown alpha mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Combined,
    /// KD on steps where `⌊step/period⌋` is even, LM otherwise.
    Alternating,
}

impl FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "combined" => Ok(LossMode::Combined),
            "alternating" => Ok(LossMode::Alternating),
            other => Err(format!("unknown loss mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub alpha_mode: AlphaMode,
    pub alpha_fixed: f64,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub loss_mode: LossMode,
    pub alternation_period: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Validation interval; `0` evaluates only at the end.
    pub eval_every: usize,
    /// Cap on validation sequences per language; `0` uses all.
    pub eval_sequences: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha_mode: AlphaMode::Fixed,
            alpha_fixed: 0.5,
            alpha_start: 0.2,
            alpha_end: 0.8,
            loss_mode: LossMode::Combined,
            alternation_period: 1,
            steps: 300,
            batch_size: 8,
            optimizer: AdamWConfig {
                lr: 1e-3,
                warmup_steps: 20,
                ..AdamWConfig::default()
            },
            eval_every: 50,
            eval_sequences: 64,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        match self.alpha_mode {
            AlphaMode::Fixed => unit("alpha_fixed", self.alpha_fixed)?,
            AlphaMode::Adaptive => {
                unit("alpha_start", self.alpha_start)?;
                unit("alpha_end", self.alpha_end)?;
            }
        }
        if self.loss_mode == LossMode::Alternating && self.alternation_period == 0 {
            return Err(Error::Config("alternation_period must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// `α·lm + (1−α)·kd`.
pub fn total_loss<F: Float>(lm: F, kd: F, alpha: F) -> F {
    mix(lm, kd, alpha)
}

pub fn alpha_at(cfg: &DistillConfig, step: usize, total_steps: usize) -> f64 {
    match cfg.alpha_mode {
        AlphaMode::Fixed => cfg.alpha_fixed,
        AlphaMode::Adaptive => {
            let frac = if total_steps == 0 {
                0.0
            } else {
                step.min(total_steps) as f64 / total_steps as f64
            };
            cfg.alpha_start + (cfg.alpha_end - cfg.alpha_start) * frac
        }
    }
}

/// Which loss a step optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Kd,
    Lm,
    Combined { alpha: f64 },
}

pub fn objective_at(cfg: &DistillConfig, step: usize, total_steps: usize) -> Objective {
    match cfg.loss_mode {
        LossMode::Combined => Objective::Combined {
            alpha: alpha_at(cfg, step, total_steps),
        },
        LossMode::Alternating => {
            if (step / cfg.alternation_period) % 2 == 0 {
                Objective::Kd
            } else {
                Objective::Lm
            }
        }
    }
}

/// Scalar value of the step objective.
pub fn step_objective<F: Float>(cfg: &DistillConfig, step: usize, total_steps: usize, lm: F, kd: F) -> F {
    match objective_at(cfg, step, total_steps) {
        Objective::Kd => kd,
        Objective::Lm => lm,
        Objective::Combined { alpha } => total_loss(lm, kd, F::from_f64_lossy(alpha)),
    }
}

/// Mean over unmasked positions of `KL(softmax(student) ‖ softmax(teacher))`.
/// Both logit buffers are `[positions × vocab]`; the teacher is constant.
pub fn rkl_loss<F: Float>(tape: &mut Tape<F>, student: Var, teacher: &[F], mask: &[bool]) -> Result<Var> {
    tape.reverse_kl(student, teacher, mask)
}

/// Plain-value form of [`rkl_loss`].
pub fn rkl_value<F: Float>(student: &[F], teacher: &[F], vocab: usize, mask: &[bool]) -> Result<F> {
    if student.len() != teacher.len() || vocab == 0 || student.len() != mask.len() * vocab {
        return Err(Error::shape(
            "rkl_loss",
            format!("student {} values, teacher {}, vocab {vocab}, mask {}", student.len(), teacher.len(), mask.len()),
        ));
    }
    let mut tape = Tape::new();
    let s = tape.constant(&[mask.len(), vocab], student.to_vec())?;
    let loss = tape.reverse_kl(s, teacher, mask)?;
    Ok(tape.value(loss)[0])
}

/// One row of the distillation metric log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub loss_lm: f32,
    pub loss_kd: f32,
    pub loss_total: f32,
    pub alpha: f32,
    pub phase_lang: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistillLog {
    pub rows: Vec<MetricRow>,
    /// `(step, language, validation cross-entropy)`.
    pub evals: Vec<(usize, Lang, f64)>,
}

impl DistillLog {
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("step,loss_lm,loss_kd,loss_total,alpha,phase_lang\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.loss_lm, r.loss_kd, r.loss_total, r.alpha, r.phase_lang
            ));
        }
        s
    }

    pub fn evals_csv(&self) -> String {
        let mut s = String::from("step,lang,eval_ce\n");
        for (step, lang, ce) in &self.evals {
            s.push_str(&format!("{step},{lang},{ce}\n"));
        }
        s
    }

    pub fn final_eval(&self, lang: Lang) -> Option<f64> {
        self.evals.iter().rev().find(|e| e.1 == lang).map(|e| e.2)
    }
}

/// Builds the step objective on the tape from student logits. Returns the
/// objective node and the logged row values.
pub(crate) fn objective_node(
    tape: &mut Tape<f32>,
    cfg: &DistillConfig,
    step: usize,
    total_steps: usize,
    student_logits: Var,
    teacher_logits: &[f32],
    batch: &Batch,
) -> Result<(Var, [f32; 4])> {
    let lm = lm_loss(tape, student_logits, &batch.tokens, &batch.mask, batch.batch_size, batch.context_len)?;
    let kd = rkl_loss(tape, student_logits, teacher_logits, &batch.mask)?;
    let alpha = alpha_at(cfg, step, total_steps) as f32;
    let total = match objective_at(cfg, step, total_steps) {
        Objective::Kd => kd,
        Objective::Lm => lm,
        Objective::Combined { .. } => tape.mix(lm, kd, alpha)?,
    };
    let vals = [tape.value(lm)[0], tape.value(kd)[0], tape.value(total)[0], alpha];
    Ok((total, vals))
}

pub(crate) fn teacher_logits(teacher: &TransformerLM<f32>, batch: &Batch) -> Result<Vec<f32>> {
    teacher.logits(None, &batch.tokens, batch.batch_size, batch.context_len)
}

pub(crate) fn check_vocab(teacher: &ModelConfig, student: &ModelConfig) -> Result<()> {
    if teacher.vocab_size != student.vocab_size {
        return Err(Error::VocabMismatch(teacher.vocab_size, student.vocab_size));
    }
    Ok(())
}

/// A student under distillation together with its optimizer state.
pub struct Distiller<'t> {
    teacher: &'t TransformerLM<f32>,
    pub student: TransformerLM<f32>,
    opt: AdamW<f32>,
    cfg: DistillConfig,
    step: usize,
}

impl<'t> Distiller<'t> {
    pub fn new(teacher: &'t TransformerLM<f32>, student: TransformerLM<f32>, cfg: DistillConfig) -> Result<Self> {
        cfg.validate()?;
        check_vocab(&teacher.config, &student.config)?;
        let opt = AdamW::new(cfg.optimizer, &student.params);
        Ok(Distiller {
            teacher,
            student,
            opt,
            cfg,
            step: 0,
        })
    }

    /// One optimizer step on `batch`; `step` and `total` drive the alpha
    /// schedule, loss alternation and learning rate.
    pub fn train_step(&mut self, batch: &Batch, step: usize, total: usize, label: &str) -> Result<MetricRow> {
        let t_logits = teacher_logits(self.teacher, batch)?;
        let mut tape = Tape::new();
        let vars = self.student.params.bind(&mut tape, true);
        let logits = self
            .student
            .forward(&mut tape, &vars, None, &batch.tokens, batch.batch_size, batch.context_len)?;
        let (obj, [lm, kd, tot, alpha]) = objective_node(&mut tape, &self.cfg, step, total, logits, &t_logits, batch)?;
        if !tot.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                loss: f64::from(tot),
            });
        }
        tape.backward(obj)?;
        self.student.params.accumulate_grads(&tape, &vars)?;
        clip_grad_norm(&mut [&mut self.student.params], self.cfg.optimizer.max_grad_norm)?;
        self.opt.step(&mut self.student.params, self.cfg.optimizer.lr_at(step, total))?;
        self.step += 1;
        Ok(MetricRow {
            step: self.step - 1,
            loss_lm: lm,
            loss_kd: kd,
            loss_total: tot,
            alpha,
            phase_lang: label.to_string(),
        })
    }

    /// Runs `steps` steps from `stream`, evaluating on `eval` every
    /// `eval_every` steps and at the end. Logged steps count from the
    /// distiller's start.
    pub fn run(
        &mut self,
        stream: &mut BatchStream,
        steps: usize,
        eval: &PerLang<Vec<Vec<u32>>>,
        label: &str,
        log: &mut DistillLog,
    ) -> Result<()> {
        for s in 0..steps {
            let batch = stream.next_batch();
            let row = self.train_step(&batch, s, steps, label)?;
            log.rows.push(row);
            let done = s + 1;
            if (self.cfg.eval_every > 0 && done % self.cfg.eval_every == 0) || done == steps {
                self.evaluate_into(eval, log)?;
            }
        }
        Ok(())
    }

    fn evaluate_into(&self, eval: &PerLang<Vec<Vec<u32>>>, log: &mut DistillLog) -> Result<()> {
        let ces = evaluate_per_lang(&self.student, None, eval, self.cfg.eval_sequences)?;
        for (l, ce) in ces.iter() {
            if let Some(ce) = ce {
                log.evals.push((self.step, l, *ce));
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn into_student(self) -> TransformerLM<f32> {
        self.student
    }
}

/// Fresh student from the `init` substream of `seed`.
pub fn init_student(config: &ModelConfig, own_embedding: bool, seed: u64) -> Result<TransformerLM<f32>> {
    TransformerLM::new(*config, own_embedding, &mut Rng::derive(seed, "init"))
}

/// Distills a fresh student on the batches of `stream`.
pub fn distill(
    teacher: &TransformerLM<f32>,
    student_config: &ModelConfig,
    stream: &mut BatchStream,
    eval: &PerLang<Vec<Vec<u32>>>,
    cfg: &DistillConfig,
    seed: u64,
    label: &str,
) -> Result<(TransformerLM<f32>, DistillLog)> {
    check_vocab(&teacher.config, student_config)?;
    let student = init_student(student_config, true, seed)?;
    let mut d = Distiller::new(teacher, student, *cfg)?;
    let mut log = DistillLog::default();
    d.run(stream, cfg.steps, eval, label, &mut log)?;
    Ok((d.into_student(), log))
}

/// Single-language batch stream drawn from the `batching/<lang>` substream.
pub fn language_stream(
    train: &PerLang<Vec<Vec<u32>>>,
    lang: Lang,
    context_len: usize,
    batch_size: usize,
    seed: u64,
) -> Result<BatchStream> {
    let mut only = PerLang::default();
    only[lang] = train[lang].clone();
    BatchStream::new(
        only,
        context_len,
        batch_size,
        BatchMode::PerLanguage,
        substream(seed, &format!("batching/{lang}")),
    )
}

/// End of one sequential phase.
#[derive(Debug, Clone)]
pub struct Phase {
    pub lang: Lang,
    /// Student weights at the end of the phase.
    pub checkpoint: TransformerLM<f32>,
    /// Validation cross-entropy per language at the end of the phase.
    pub eval: PerLang<f64>,
}

/// Trains one student on each language in turn, keeping the optimizer
/// state across phases.
pub fn sequential_distill(
    teacher: &TransformerLM<f32>,
    student_config: &ModelConfig,
    train: &PerLang<Vec<Vec<u32>>>,
    eval: &PerLang<Vec<Vec<u32>>>,
    order: &[Lang],
    cfg: &DistillConfig,
    seed: u64,
) -> Result<(TransformerLM<f32>, Vec<Phase>, DistillLog)> {
    let mut sorted = order.to_vec();
    sorted.sort();
    if sorted != Lang::ALL {
        return Err(Error::Config(format!(
            "language order must be a permutation of en, fr, de, py; got {order:?}"
        )));
    }
    check_vocab(&teacher.config, student_config)?;
    let student = init_student(student_config, true, seed)?;
    let mut d = Distiller::new(teacher, student, *cfg)?;
    let mut log = DistillLog::default();
    let mut phases = Vec::new();
    for &lang in order {
        let mut stream = language_stream(train, lang, student_config.context_len, cfg.batch_size, seed)?;
        d.run(&mut stream, cfg.steps, eval, lang.code(), &mut log)?;
        let ces = evaluate_per_lang(&d.student, None, eval, cfg.eval_sequences)?;
        phases.push(Phase {
            lang,
            checkpoint: d.student.clone(),
            eval: ces.map(|_, c| c.unwrap_or(f64::NAN)),
        });
    }
    Ok((d.into_student(), phases, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rkl_hand_example() {
        // q = (0.9, 0.1), p = (0.5, 0.5)
        let s = [0.9f64.ln(), 0.1f64.ln()];
        let t = [0.0, 0.0];
        let want = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
        let got = rkl_value(&s, &t, 2, &[true]).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.3681).abs() < 1e-4);
    }

    #[test]
    fn rkl_identity_and_shape_errors() {
        let x = [0.3f64, -1.0, 2.0, 0.1, 0.1, 0.1];
        assert!(rkl_value(&x, &x, 3, &[true, true]).unwrap().abs() < 1e-7);
        assert!(rkl_value(&x, &x[..3], 3, &[true, true]).is_err());
    }

    #[test]
    fn eq1_arithmetic() {
        assert_eq!(total_loss(2.0, 1.0, 0.5), 1.5);
        assert_eq!(total_loss(2.5f32, 1.25, 1.0), 2.5);
        assert_eq!(total_loss(2.5f32, 1.25, 0.0), 1.25);
    }

    #[test]
    fn alpha_schedules() {
        let mut c = DistillConfig {
            alpha_mode: AlphaMode::Adaptive,
            ..DistillConfig::default()
        };
        assert!((alpha_at(&c, 50, 100) - 0.5).abs() < 1e-12);
        assert_eq!(alpha_at(&c, 0, 100), 0.2);
        assert_eq!(alpha_at(&c, 100, 100), 0.8);
        c.alpha_mode = AlphaMode::Fixed;
        c.alpha_fixed = 0.3;
        assert!((0..=10).all(|s| alpha_at(&c, s, 10) == 0.3));
        assert_eq!(DistillConfig::default().alpha_fixed, 0.5);
    }

    #[test]
    fn alternation_follows_period() {
        let mut c = DistillConfig {
            loss_mode: LossMode::Alternating,
            ..DistillConfig::default()
        };
        assert_eq!(objective_at(&c, 0, 10), Objective::Kd);
        assert_eq!(objective_at(&c, 1, 10), Objective::Lm);
        c.alternation_period = 2;
        let got: Vec<_> = (0..4).map(|s| objective_at(&c, s, 10)).collect();
        assert_eq!(got, vec![Objective::Kd, Objective::Kd, Objective::Lm, Objective::Lm]);
        assert_eq!(step_objective(&c, 2, 10, 3.0, 4.0), 3.0);
        c.loss_mode = LossMode::Combined;
        c.alpha_fixed = 0.25;
        assert_eq!(step_objective(&c, 7, 10, 3.0, 4.0), 0.25 * 3.0 + 0.75 * 4.0);
    }

    #[test]
    fn config_rejects_out_of_range_alpha() {
        let c = DistillConfig {
            alpha_fixed: 1.5,
            ..DistillConfig::default()
        };
        assert!(c.validate().is_err());
        // Adaptive mode ignores alpha_fixed.
        let c = DistillConfig {
            alpha_mode: AlphaMode::Adaptive,
            ..c
        };
        assert!(c.validate().is_ok());
    }
}
