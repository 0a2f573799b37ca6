//! End-to-end studies: alpha schedules, loss modes, the three MoE wirings,
//! the common-expert grid and catastrophic forgetting.

use std::fmt;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::Serialize;

use crate::corpus::{Batch, BatchMode, BatchStream, Lang, PerLang};
use crate::distill::{
    distill, init_student, language_stream, sequential_distill, total_loss, AlphaMode, DistillConfig, DistillLog,
    Distiller, LossMode,
};
use crate::error::{Error, Result};
use crate::model::{
    evaluate_ce, evaluate_per_lang, load_checkpoint, save_checkpoint, CeSum, CheckpointMeta, ModelConfig,
    TransformerLM,
};
use crate::moe::{build_ple, standard_grid, train_jeet, train_moe_ce, GridRow, InferenceSettings, MoESystem, Routing, Setup};
use crate::numerics::{substream, Tensor};

/// `exp(ce)`, with `ce` in nats per token.
pub fn perplexity(ce: f64) -> f64 {
    ce.exp()
}

/// `(final − phase_end, 100·(final − phase_end)/phase_end)`. Negative values
/// mean the loss improved after the phase.
pub fn forgotten_knowledge(phase_end: f64, final_loss: f64) -> (f64, f64) {
    let abs = final_loss - phase_end;
    (abs, 100.0 * abs / phase_end)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunMeta {
    pub seed: u64,
    pub config_hash: String,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub ce: PerLang<Option<f64>>,
    pub ppl: PerLang<Option<f64>>,
    /// Mean of the per-language perplexities.
    pub overall_ppl: f64,
    pub meta: RunMeta,
}

impl EvalReport {
    pub fn from_sums(sums: &PerLang<Option<CeSum>>, meta: RunMeta) -> Result<Self> {
        let ce = sums.map(|_, s| s.map(|s| s.mean()));
        let ppl = ce.map(|_, c| c.map(perplexity));
        let present: Vec<f64> = ppl.0.iter().flatten().copied().collect();
        if present.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        Ok(EvalReport {
            ce,
            ppl,
            overall_ppl: present.iter().sum::<f64>() / present.len() as f64,
            meta,
        })
    }

    /// `lang,eval_ce,eval_ppl` with an `all` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lang,eval_ce,eval_ppl\n");
        for l in Lang::ALL {
            if let (Some(c), Some(p)) = (self.ce[l], self.ppl[l]) {
                s.push_str(&format!("{l},{c:.6},{p:.4}\n"));
            }
        }
        s.push_str(&format!("all,,{:.4}\n", self.overall_ppl));
        s
    }
}

fn take<'a>(seqs: &'a [Vec<u32>], limit: usize) -> &'a [Vec<u32>] {
    if limit == 0 {
        seqs
    } else {
        &seqs[..limit.min(seqs.len())]
    }
}

fn require(eval: &PerLang<Vec<Vec<u32>>>, langs: &[Lang]) -> Result<()> {
    let missing: Vec<Lang> = langs.iter().copied().filter(|&l| eval[l].is_empty()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingLanguages(missing))
    }
}

/// Cross-entropy and perplexity of a single model on `langs`.
pub fn evaluate_model(
    model: &TransformerLM<f32>,
    shared_wte: Option<&Tensor<f32>>,
    eval: &PerLang<Vec<Vec<u32>>>,
    langs: &[Lang],
    limit: usize,
    meta: RunMeta,
) -> Result<EvalReport> {
    require(eval, langs)?;
    let mut sums = PerLang::default();
    for &l in langs {
        sums[l] = Some(evaluate_ce(model, shared_wte, take(&eval[l], limit))?);
    }
    EvalReport::from_sums(&sums, meta)
}

/// Cross-entropy and perplexity of an MoE system under its current settings.
pub fn evaluate_system(
    system: &MoESystem,
    eval: &PerLang<Vec<Vec<u32>>>,
    langs: &[Lang],
    routing: Routing,
    limit: usize,
    meta: RunMeta,
) -> Result<EvalReport> {
    require(eval, langs)?;
    let mut only = PerLang::default();
    for &l in langs {
        only[l] = eval[l].clone();
    }
    EvalReport::from_sums(&system.evaluate(&only, routing, limit)?, meta)
}

/// Token-weighted cross-entropy over every language of `eval`.
pub fn pooled_ce(model: &TransformerLM<f32>, eval: &PerLang<Vec<Vec<u32>>>, limit: usize) -> Result<f64> {
    let mut sum = CeSum::default();
    for l in Lang::ALL {
        if !eval[l].is_empty() {
            sum.add(evaluate_ce(model, None, take(&eval[l], limit))?);
        }
    }
    if sum.tokens == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    Ok(sum.mean())
}

// ---- controlled single-student studies ----

/// One arm of a controlled study.
#[derive(Debug, Clone)]
pub struct Arm {
    pub label: String,
    pub log: DistillLog,
    pub final_ce: f64,
    /// Hash of every batch the arm consumed, in order.
    pub stream_digest: u64,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub arms: Vec<Arm>,
    pub notes: Vec<String>,
}

impl ComparisonReport {
    /// `setting,final_eval_ce,final_eval_ppl`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("setting,final_eval_ce,final_eval_ppl\n");
        for a in &self.arms {
            s.push_str(&format!("{},{:.6},{:.4}\n", a.label, a.final_ce, perplexity(a.final_ce)));
        }
        s
    }

    /// `setting,step,lang,eval_ce` validation curves.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("setting,step,lang,eval_ce\n");
        for a in &self.arms {
            for (step, l, ce) in &a.log.evals {
                s.push_str(&format!("{},{step},{l},{ce}\n", a.label));
            }
        }
        s
    }

    /// `setting,step,loss_lm,loss_kd,loss_total,alpha` training curves.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("setting,step,loss_lm,loss_kd,loss_total,alpha\n");
        for a in &self.arms {
            for r in &a.log.rows {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    a.label, r.step, r.loss_lm, r.loss_kd, r.loss_total, r.alpha
                ));
            }
        }
        s
    }

    pub fn arm(&self, label: &str) -> Option<&Arm> {
        self.arms.iter().find(|a| a.label == label)
    }

    /// Whether every arm consumed the same batches.
    pub fn streams_identical(&self) -> bool {
        self.arms.windows(2).all(|w| w[0].stream_digest == w[1].stream_digest)
    }
}

fn batch_hash(h: &mut impl Hasher, b: &Batch) {
    b.tokens.hash(h);
    b.langs.hash(h);
    b.mask.hash(h);
}

/// Distills a fresh student on mixed-language batches from the `batching`
/// substream. Every arm with the same seed and data sees the same batches
/// and starts from the same weights.
pub fn run_arm(
    teacher: &TransformerLM<f32>,
    student_config: &ModelConfig,
    train: &PerLang<Vec<Vec<u32>>>,
    eval: &PerLang<Vec<Vec<u32>>>,
    cfg: &DistillConfig,
    seed: u64,
    label: &str,
) -> Result<Arm> {
    let student = init_student(student_config, true, seed)?;
    let mut d = Distiller::new(teacher, student, *cfg)?;
    let mut stream = BatchStream::new(
        train.clone(),
        student_config.context_len,
        cfg.batch_size,
        BatchMode::Mixed,
        substream(seed, "batching"),
    )?;
    let mut log = DistillLog::default();
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for s in 0..cfg.steps {
        let batch = stream.next_batch();
        batch_hash(&mut h, &batch);
        log.rows.push(d.train_step(&batch, s, cfg.steps, label)?);
        let done = s + 1;
        if (cfg.eval_every > 0 && done % cfg.eval_every == 0) || done == cfg.steps {
            for (l, ce) in evaluate_per_lang(&d.student, None, eval, cfg.eval_sequences)?.iter() {
                if let Some(ce) = ce {
                    log.evals.push((done, l, *ce));
                }
            }
        }
    }
    Ok(Arm {
        label: label.to_string(),
        final_ce: pooled_ce(&d.student, eval, cfg.eval_sequences)?,
        log,
        stream_digest: h.finish(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSetting {
    Adaptive,
    Fixed(f64),
}

impl AlphaSetting {
    pub fn label(&self) -> String {
        match self {
            AlphaSetting::Adaptive => "adaptive".into(),
            AlphaSetting::Fixed(a) => format!("fixed_{a}"),
        }
    }

    fn apply(&self, cfg: &DistillConfig) -> DistillConfig {
        let mut c = *cfg;
        match *self {
            AlphaSetting::Adaptive => c.alpha_mode = AlphaMode::Adaptive,
            AlphaSetting::Fixed(a) => {
                c.alpha_mode = AlphaMode::Fixed;
                c.alpha_fixed = a;
            }
        }
        c
    }
}

impl fmt::Display for AlphaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Adaptive plus fixed α ∈ {0.1, 0.3, 0.5, 0.7, 0.9}.
pub fn default_alpha_settings() -> Vec<AlphaSetting> {
    let mut v = vec![AlphaSetting::Adaptive];
    v.extend([0.1, 0.3, 0.5, 0.7, 0.9].map(AlphaSetting::Fixed));
    v
}

pub fn run_alpha_study(
    teacher: &TransformerLM<f32>,
    student_config: &ModelConfig,
    train: &PerLang<Vec<Vec<u32>>>,
    eval: &PerLang<Vec<Vec<u32>>>,
    cfg: &DistillConfig,
    settings: &[AlphaSetting],
    seed: u64,
) -> Result<ComparisonReport> {
    if !settings.contains(&AlphaSetting::Adaptive) || !settings.iter().any(|s| matches!(s, AlphaSetting::Fixed(_))) {
        return Err(Error::Config("alpha study needs the adaptive setting and at least one fixed value".into()));
    }
    let mut arms = Vec::new();
    for s in settings {
        arms.push(run_arm(teacher, student_config, train, eval, &s.apply(cfg), seed, &s.label())?);
    }
    let mut notes = Vec::new();
    if settings.contains(&AlphaSetting::Fixed(0.5)) {
        notes.push("fixed_0.5: reference near-best fixed alpha, within about 0.01 eval loss of adaptive".to_string());
    }
    if let (Some(a), Some(best)) = (
        arms.iter().find(|a| a.label == "adaptive"),
        arms.iter().filter(|a| a.label != "adaptive").min_by(|x, y| x.final_ce.total_cmp(&y.final_ce)),
    ) {
        notes.push(format!(
            "adaptive {:.4} vs best fixed ({}) {:.4}: difference {:+.4}",
            a.final_ce,
            best.label,
            best.final_ce,
            a.final_ce - best.final_ce
        ));
    }
    Ok(ComparisonReport { arms, notes })
}

/// Reference full-scale eval losses for combined and alternating losses.
pub const LOSS_MODE_REFERENCE: (f64, f64) = (4.305, 4.322);

/// Whether each logged combined-mode total equals `α·lm + (1−α)·kd` bit for
/// bit.
pub fn identity_holds(log: &DistillLog) -> bool {
    log.rows
        .iter()
        .all(|r| r.loss_total.to_bits() == total_loss(r.loss_lm, r.loss_kd, r.alpha).to_bits())
}

pub fn run_loss_mode_study(
    teacher: &TransformerLM<f32>,
    student_config: &ModelConfig,
    train: &PerLang<Vec<Vec<u32>>>,
    eval: &PerLang<Vec<Vec<u32>>>,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<ComparisonReport> {
    let mut arms = Vec::new();
    for (mode, label) in [(LossMode::Combined, "combined"), (LossMode::Alternating, "alternating")] {
        let c = DistillConfig { loss_mode: mode, ..*cfg };
        arms.push(run_arm(teacher, student_config, train, eval, &c, seed, label)?);
    }
    let audit = identity_holds(&arms[0].log);
    let (rc, ra) = LOSS_MODE_REFERENCE;
    let notes = vec![
        format!("reference full-scale eval loss: combined {rc}, alternating {ra}"),
        format!("combined-mode total = alpha*lm + (1-alpha)*kd at every step: {audit}"),
    ];
    Ok(ComparisonReport { arms, notes })
}

// ---- forgetting ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Experiment {
    #[serde(rename = "A_sequential")]
    ASequential,
    #[serde(rename = "B_single_session")]
    BSingleSession,
    #[serde(rename = "C_moe")]
    CMoe,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::ASequential => "A_sequential",
            Experiment::BSingleSession => "B_single_session",
            Experiment::CMoe => "C_moe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Forgetting {
    pub loss_at_phase_end: f64,
    pub loss_final: f64,
    pub forgotten_abs: f64,
    pub forgotten_pct: f64,
}

impl Forgetting {
    pub fn new(phase_end: f64, final_loss: f64) -> Self {
        let (abs, pct) = forgotten_knowledge(phase_end, final_loss);
        Forgetting {
            loss_at_phase_end: phase_end,
            loss_final: final_loss,
            forgotten_abs: abs,
            forgotten_pct: pct,
        }
    }

    /// `0.499 (12.0%)`.
    pub fn cell(&self) -> String {
        format!("{:.3} ({:.1}%)", self.forgotten_abs, self.forgotten_pct)
    }
}

/// `None` marks a language with no training after its phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForgettingRecord {
    pub experiment: Experiment,
    pub per_lang: PerLang<Option<Forgetting>>,
}

#[derive(Debug, Clone)]
pub struct ForgettingStudy {
    pub records: [ForgettingRecord; 3],
    /// Validation logs keyed by series name (`A`, `B`, `C/en`, ...).
    pub curves: Vec<(String, DistillLog)>,
    /// The assembled PLE system of experiment C.
    pub ple: MoESystem,
}

impl ForgettingStudy {
    pub fn record(&self, e: Experiment) -> &ForgettingRecord {
        self.records.iter().find(|r| r.experiment == e).expect("all three experiments")
    }

    /// One row per language, one column per experiment.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("language,experiment_a,experiment_b,experiment_c\n");
        for l in Lang::ALL {
            s.push_str(l.code());
            for r in &self.records {
                s.push(',');
                s.push_str(&r.per_lang[l].map_or_else(|| "N/A".to_string(), |f| f.cell()));
            }
            s.push('\n');
        }
        s
    }

    /// `experiment,lang,loss_at_phase_end,loss_final,forgotten_abs,forgotten_pct`.
    pub fn long_csv(&self) -> String {
        let mut s = String::from("experiment,lang,loss_at_phase_end,loss_final,forgotten_abs,forgotten_pct\n");
        for r in &self.records {
            for l in Lang::ALL {
                match r.per_lang[l] {
                    Some(f) => s.push_str(&format!(
                        "{},{l},{},{},{},{}\n",
                        r.experiment.name(),
                        f.loss_at_phase_end,
                        f.loss_final,
                        f.forgotten_abs,
                        f.forgotten_pct
                    )),
                    None => s.push_str(&format!("{},{l},N/A,N/A,N/A,N/A\n", r.experiment.name())),
                }
            }
        }
        s
    }

    /// `series,step,lang,eval_ce`.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("series,step,lang,eval_ce\n");
        for (name, log) in &self.curves {
            for (step, l, ce) in &log.evals {
                s.push_str(&format!("{name},{step},{l},{ce}\n"));
            }
        }
        s
    }
}

/// Sequential order of experiment A.
pub const SEQUENTIAL_ORDER: [Lang; 4] = [Lang::En, Lang::Fr, Lang::De, Lang::Py];

/// Four independent single-language distillations, each from its own
/// `batching/<lang>` stream.
pub fn distill_experts(
    teacher: &TransformerLM<f32>,
    student_config: &ModelConfig,
    train: &PerLang<Vec<Vec<u32>>>,
    eval: &PerLang<Vec<Vec<u32>>>,
    cfg: &DistillConfig,
    seed: u64,
) -> Result<PerLang<(TransformerLM<f32>, DistillLog)>> {
    require(train, &Lang::ALL)?;
    let mut out = Vec::new();
    for l in Lang::ALL {
        let mut stream = language_stream(train, l, student_config.context_len, cfg.batch_size, seed)?;
        out.push(distill(teacher, student_config, &mut stream, eval, cfg, seed, l.code())?);
    }
    Ok(PerLang(out.try_into().unwrap_or_else(|_| unreachable!())))
}

/// Runs experiments A, B and C. `cfg.steps` is the length of one language
/// phase; B trains for `4·cfg.steps` mixed batches. When `checkpoints` is
/// given, C's experts pass through a save/load round trip before assembly.
pub fn run_forgetting_study(
    teacher: &TransformerLM<f32>,
    student_config: &ModelConfig,
    train: &PerLang<Vec<Vec<u32>>>,
    eval: &PerLang<Vec<Vec<u32>>>,
    cfg: &DistillConfig,
    seed: u64,
    checkpoints: Option<&Path>,
) -> Result<ForgettingStudy> {
    require(train, &Lang::ALL)?;
    require(eval, &Lang::ALL)?;
    let limit = cfg.eval_sequences;
    let mut curves = Vec::new();

    let (_, phases, log_a) = sequential_distill(teacher, student_config, train, eval, &SEQUENTIAL_ORDER, cfg, seed)?;
    let last = phases.last().expect("four phases");
    let a = PerLang::from_fn(|l| {
        let p = phases.iter().find(|p| p.lang == l).expect("every language has a phase");
        (p.lang != last.lang).then(|| Forgetting::new(p.eval[l], last.eval[l]))
    });
    curves.push(("A".to_string(), log_a));

    let cfg_b = DistillConfig {
        steps: Lang::ALL.len() * cfg.steps,
        ..*cfg
    };
    let arm = run_arm(teacher, student_config, train, eval, &cfg_b, seed, "B")?;
    let b = PerLang::from_fn(|l| {
        let end = arm.log.final_eval(l).expect("final evaluation covers every language");
        Some(Forgetting::new(end, end))
    });
    curves.push(("B".to_string(), arm.log));

    let experts = distill_experts(teacher, student_config, train, eval, cfg, seed)?;
    let mut phase_end = PerLang::default();
    let mut students = Vec::new();
    for (l, (model, log)) in experts.0.into_iter().zip(Lang::ALL).map(|(x, l)| (l, x)) {
        phase_end[l] = evaluate_ce(&model, None, take(&eval[l], limit))?.mean();
        let model = match checkpoints {
            Some(dir) => {
                let path = dir.join(format!("expert_{l}"));
                save_checkpoint(&model, CheckpointMeta { seed, step: cfg.steps }, &path)?;
                load_checkpoint(&path)?.0
            }
            None => model,
        };
        students.push(model);
        curves.push((format!("C/{l}"), log));
    }
    let ple = build_ple(PerLang(students.try_into().unwrap_or_else(|_| unreachable!())), None)?;
    let final_c = ple.evaluate(eval, Routing::Oracle, limit)?;
    let c = PerLang::from_fn(|l| final_c[l].map(|s| Forgetting::new(phase_end[l], s.mean())));

    Ok(ForgettingStudy {
        records: [
            ForgettingRecord {
                experiment: Experiment::ASequential,
                per_lang: a,
            },
            ForgettingRecord {
                experiment: Experiment::BSingleSession,
                per_lang: b,
            },
            ForgettingRecord {
                experiment: Experiment::CMoe,
                per_lang: c,
            },
        ],
        curves,
        ple,
    })
}

// ---- MoE comparison ----

#[derive(Debug, Clone)]
pub struct MoeComparison {
    /// One row per setup under its default inference settings.
    pub rows: Vec<(Setup, GridRow)>,
    /// The MoE-CE system over the standard routable-subset grid.
    pub grid: Vec<GridRow>,
    pub systems: Vec<MoESystem>,
    pub logs: Vec<(Setup, DistillLog)>,
}

impl MoeComparison {
    /// `setup,ppl_en,ppl_fr,ppl_de,ppl_py,ppl_all`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("setup,ppl_en,ppl_fr,ppl_de,ppl_py,ppl_all\n");
        let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
        for (setup, r) in &self.rows {
            s.push_str(setup.name());
            for l in Lang::ALL {
                s.push_str(&format!(",{}", cell(r.perplexity(l))));
            }
            s.push_str(&format!(",{}\n", cell(r.overall())));
        }
        s
    }
}

/// Trains PLE, JEET and MoE-CE from one teacher and compares them under
/// `routing`. The router, if any, is attached to every system.
#[allow(clippy::too_many_arguments)]
pub fn run_moe_comparison(
    teacher: &TransformerLM<f32>,
    student_config: &ModelConfig,
    train: &PerLang<Vec<Vec<u32>>>,
    eval: &PerLang<Vec<Vec<u32>>>,
    cfg: &DistillConfig,
    seed: u64,
    router: Option<&crate::router::Router>,
    routing: Routing,
) -> Result<MoeComparison> {
    require(eval, &Lang::ALL)?;
    let limit = cfg.eval_sequences;
    let experts = distill_experts(teacher, student_config, train, eval, cfg, seed)?;
    let mut logs = Vec::new();
    let mut merged = DistillLog::default();
    for (_, log) in experts.0.iter() {
        merged.rows.extend(log.rows.iter().cloned());
        merged.evals.extend(log.evals.iter().cloned());
    }
    logs.push((Setup::Ple, merged));
    let ple = build_ple(experts.map(|_, (m, _)| m.clone()), router.cloned())?;
    let (jeet, log) = train_jeet(teacher, student_config, train, eval, cfg, seed)?;
    logs.push((Setup::Jeet, log));
    let (moe, log) = train_moe_ce(teacher, student_config, train, eval, cfg, seed)?;
    logs.push((Setup::MoeCe, log));
    let mut systems = vec![ple, jeet, moe];
    if let Some(r) = router {
        for s in &mut systems[1..] {
            s.set_router(r.clone());
        }
    }
    let mut rows = Vec::new();
    for s in &systems {
        let settings = s.settings.clone();
        let row = s.evaluate_grid(eval, &[settings], routing, limit)?.remove(0);
        rows.push((s.setup(), row));
    }
    let grid = systems[2].evaluate_grid(eval, &standard_grid(), routing, limit)?;
    Ok(MoeComparison {
        rows,
        grid,
        systems,
        logs,
    })
}

/// Pairs each routable subset's with-common row with its without-common row.
pub fn common_expert_pairs(grid: &[GridRow]) -> Vec<(&GridRow, &GridRow)> {
    let mut out = Vec::new();
    for with in grid.iter().filter(|r| r.settings.use_common) {
        let want = InferenceSettings {
            routable: with.settings.routable.clone(),
            use_common: false,
        };
        if let Some(without) = grid.iter().find(|r| r.settings == want) {
            out.push((with, without));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perplexity_examples() {
        assert_eq!(perplexity(0.0), 1.0);
        assert!((perplexity(4.305) - 74.08).abs() < 0.05);
        assert!((perplexity((2048f64).ln()) - 2048.0).abs() < 1e-9);
    }

    #[test]
    fn forgotten_knowledge_examples() {
        let (abs, pct) = forgotten_knowledge(4.158, 4.657);
        assert!((abs - 0.499).abs() < 1e-3);
        assert!((pct - 12.0).abs() < 0.1);
        let (abs, pct) = forgotten_knowledge(3.424, 4.725);
        assert!((abs - 1.301).abs() < 1e-3);
        assert!((pct - 38.0).abs() < 0.1);
        assert_eq!(forgotten_knowledge(3.5, 3.5), (0.0, 0.0));
        let (abs, pct) = forgotten_knowledge(4.0, 3.0);
        assert_eq!((abs, pct), (-1.0, -25.0));
    }

    #[test]
    fn forgetting_cells() {
        assert_eq!(Forgetting::new(4.158, 4.657).cell(), "0.499 (12.0%)");
        assert_eq!(Forgetting::new(2.0, 2.0).cell(), "0.000 (0.0%)");
    }

    #[test]
    fn report_from_sums() {
        let mut sums = PerLang::default();
        sums[Lang::En] = Some(CeSum { nll: 0.0, tokens: 4 });
        sums[Lang::Py] = Some(CeSum { nll: 8.0, tokens: 4 });
        let meta = RunMeta {
            seed: 1,
            config_hash: "x".into(),
            steps: 0,
        };
        let r = EvalReport::from_sums(&sums, meta.clone()).unwrap();
        assert_eq!(r.ppl[Lang::En], Some(1.0));
        assert_eq!(r.ppl[Lang::Py], Some(2f64.exp()));
        assert_eq!(r.ppl[Lang::Fr], None);
        assert_eq!(r.overall_ppl, (1.0 + 2f64.exp()) / 2.0);
        assert!(EvalReport::from_sums(&PerLang::default(), meta).is_err());
    }

    #[test]
    fn alpha_labels() {
        let labels: Vec<String> = default_alpha_settings().iter().map(|s| s.label()).collect();
        assert_eq!(labels, ["adaptive", "fixed_0.1", "fixed_0.3", "fixed_0.5", "fixed_0.7", "fixed_0.9"]);
    }
}
