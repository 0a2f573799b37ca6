//! Command-line driver for the distillation and mixture-of-experts pipeline.
//!
//! Every stage reads and writes artifacts under one output directory and
//! leaves a run manifest in `manifests/`.

pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use modmoe::corpus::{balance_corpus, load_corpus, pack_by_language, split_holdout, write_corpus, CorpusStats};
use modmoe::distill::{AlphaMode, LossMode};
use modmoe::experiments::{
    distill_experts, run_alpha_study, run_forgetting_study, run_loss_mode_study, run_moe_comparison, AlphaSetting,
    ComparisonReport,
};
use modmoe::model::{load_checkpoint, save_checkpoint, train_teacher, CheckpointMeta, TransformerLM};
use modmoe::moe::{
    build_ple, grid_csv, load_bundle, save_bundle, standard_grid, train_jeet, train_moe_ce, InferenceSettings,
    MoESystem, Routing, Setup,
};
use modmoe::numerics::substream;
use modmoe::router::Router;
use modmoe::{Document, Lang, PerLang, Tokenizer};
use serde::Serialize;

pub use config::RunConfig;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "MODMOE_NUM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "modmoe", version, about = "Distil per-language experts and evaluate mixtures of them")]
pub struct Cli {
    /// Flat JSON config with dotted keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; required by every training stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Artifact directory shared by all stages.
    #[arg(long, global = true, default_value = "runs/default")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct DistillArgs {
    /// Distillation steps (per language phase or per expert).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub alpha_mode: Option<AlphaMode>,
    #[arg(long)]
    pub loss_mode: Option<LossMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Grid {
    /// Every routable subset, with and without the common expert.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    Forgetting,
    Alpha,
    LossMode,
    Moe,
}

impl Study {
    fn name(self) -> &'static str {
        match self {
            Study::Forgetting => "forgetting",
            Study::Alpha => "alpha",
            Study::LossMode => "loss-mode",
            Study::Moe => "moe",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split the desk corpora into training and held-out documents.
    Prepare,
    /// Train the BPE tokenizer and balance the training documents.
    Tokenizer {
        #[arg(long)]
        vocab_size: Option<usize>,
    },
    /// Train the teacher language model.
    Teacher {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Distil one student per language from the teacher.
    Distill(DistillArgs),
    /// Train and evaluate the language router.
    Router,
    /// Assemble (PLE) or jointly train (JEET, MoE-CE) an expert system.
    MoeTrain {
        #[arg(long)]
        setup: Option<Setup>,
        #[command(flatten)]
        distill: DistillArgs,
    },
    /// Evaluate an expert system under one or many inference settings.
    MoeEval {
        #[arg(long)]
        setup: Option<Setup>,
        /// Comma-separated routable languages, or `none`.
        #[arg(long)]
        routable: Option<String>,
        #[arg(long)]
        use_common: Option<bool>,
        #[arg(long, value_enum)]
        settings_grid: Option<Grid>,
    },
    /// Run a comparison study.
    Study {
        #[arg(value_enum)]
        name: Study,
        #[command(flatten)]
        distill: DistillArgs,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Prepare => "prepare",
            Command::Tokenizer { .. } => "tokenizer",
            Command::Teacher { .. } => "teacher",
            Command::Distill(_) => "distill",
            Command::Router => "router",
            Command::MoeTrain { .. } => "moe-train",
            Command::MoeEval { .. } => "moe-eval",
            Command::Study { .. } => "study",
        }
    }

    fn needs_seed(&self) -> bool {
        !matches!(self, Command::Tokenizer { .. } | Command::MoeEval { .. })
    }
}

/// Worker-thread cap from [`THREADS_ENV`]. Training is single-threaded, so
/// any positive cap is honoured.
pub fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => bail!("{THREADS_ENV} must be a positive integer, got '{v}'"),
        },
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: Option<u64>,
    versions: BTreeMap<&'static str, String>,
    threads: usize,
    /// Paths relative to the output directory.
    outputs: Vec<String>,
    config: &'a RunConfig,
}

/// Collects the files one stage writes.
struct Stage<'a> {
    out: &'a Path,
    outputs: Vec<PathBuf>,
}

impl<'a> Stage<'a> {
    fn new(out: &'a Path) -> Self {
        Stage {
            out,
            outputs: Vec::new(),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn write(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel);
        if let Some(d) = p.parent() {
            std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        self.outputs.push(p);
        Ok(())
    }

    /// Records every file under `rel`.
    fn record_dir(&mut self, rel: &str) -> Result<()> {
        fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
            let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
            entries.sort_by_key(|e| e.path());
            for e in entries {
                if e.file_type()?.is_dir() {
                    walk(&e.path(), out)?;
                } else {
                    out.push(e.path());
                }
            }
            Ok(())
        }
        let dir = self.path(rel);
        walk(&dir, &mut self.outputs).with_context(|| format!("listing {}", dir.display()))
    }

    fn finish(mut self, name: &str, cfg: &RunConfig, seed: Option<u64>, threads: usize) -> Result<Vec<PathBuf>> {
        let hash = cfg.hash();
        let mut rel: Vec<String> = self
            .outputs
            .iter()
            .map(|p| p.strip_prefix(self.out).unwrap_or(p).display().to_string())
            .collect();
        rel.sort();
        rel.dedup();
        let mut versions = BTreeMap::new();
        versions.insert("modmoe", env!("CARGO_PKG_VERSION").to_string());
        let manifest = Manifest {
            command: name,
            config_hash: &hash,
            seed,
            versions,
            threads,
            outputs: rel,
            config: cfg,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        let path = self.path(&format!("manifests/{name}.json"));
        std::fs::create_dir_all(path.parent().expect("manifest dir"))?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path);
        Ok(self.outputs)
    }
}

const PREPARED_TRAIN: &str = "prepared/train.jsonl";
const PREPARED_EVAL: &str = "prepared/eval.jsonl";
const TOKENIZER: &str = "tokenizer/tokenizer.json";
const BALANCED: &str = "tokenizer/balanced_train.jsonl";
const TEACHER: &str = "teacher/checkpoint";
const STUDENTS: &str = "students";
const ROUTER: &str = "router/router.json";

fn require(out: &Path, rel: &str, what: &str) -> Result<PathBuf> {
    let p = out.join(rel);
    if p.exists() {
        Ok(p)
    } else {
        bail!("missing artifact: {what} ({})", p.display())
    }
}

/// Tokenizer plus packed training and evaluation sequences.
struct Data {
    tok: Tokenizer,
    train: PerLang<Vec<Vec<u32>>>,
    eval: PerLang<Vec<Vec<u32>>>,
}

fn load_docs(p: &Path) -> Result<Vec<Document>> {
    Ok(load_corpus(p)?)
}

fn load_data(out: &Path, context_len: usize) -> Result<Data> {
    let tok = Tokenizer::load(&require(out, TOKENIZER, "tokenizer")?)?;
    let train_docs = load_docs(&require(out, BALANCED, "balanced training corpus")?)?;
    let eval_docs = load_docs(&require(out, PREPARED_EVAL, "held-out corpus")?)?;
    Ok(Data {
        train: pack_by_language(&train_docs, &tok, context_len, false),
        eval: pack_by_language(&eval_docs, &tok, context_len, false),
        tok,
    })
}

fn load_teacher(out: &Path) -> Result<TransformerLM<f32>> {
    let dir = require(out, TEACHER, "teacher checkpoint")?;
    Ok(load_checkpoint(&dir)?.0)
}

fn apply_distill(cfg: &mut RunConfig, a: &DistillArgs) {
    if let Some(s) = a.steps {
        cfg.distill.steps = s;
    }
    if let Some(m) = a.alpha_mode {
        cfg.distill.alpha_mode = m;
    }
    if let Some(m) = a.loss_mode {
        cfg.distill.loss_mode = m;
    }
}

fn routing_choice(cfg: &RunConfig) -> Result<bool> {
    match cfg.moe.routing.as_str() {
        "trained" => Ok(true),
        "oracle" => Ok(false),
        other => bail!("moe.routing must be 'trained' or 'oracle', got '{other}'"),
    }
}

fn study_csvs(stage: &mut Stage, dir: &str, stem: &str, r: &ComparisonReport) -> Result<()> {
    stage.write(&format!("{dir}/{stem}.csv"), &r.to_csv())?;
    stage.write(&format!("{dir}/{stem}_curves.csv"), &r.curves_csv())?;
    stage.write(&format!("{dir}/{stem}_metrics.csv"), &r.metrics_csv())?;
    stage.write(&format!("{dir}/notes.txt"), &(r.notes.join("\n") + "\n"))
}

fn parse_alpha(s: &str) -> Result<AlphaSetting> {
    if s == "adaptive" {
        return Ok(AlphaSetting::Adaptive);
    }
    s.parse::<f64>()
        .map(AlphaSetting::Fixed)
        .map_err(|_| anyhow!("alpha setting '{s}' is neither 'adaptive' nor a number"))
}

/// Runs one subcommand; returns every file it wrote, manifest last.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let threads = thread_cap()?;
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let cmd = cli.command.name();
    let seed = match (cli.seed, cli.command.needs_seed()) {
        (Some(s), _) => Some(s),
        (None, true) => bail!("--seed is required for {cmd}"),
        (None, false) => None,
    };
    let root = seed.unwrap_or(0);
    let out = cli.out.as_path();
    let mut stage = Stage::new(out);
    let mut manifest_name = cmd.to_string();
    let meta = |step| CheckpointMeta { seed: root, step };

    match &cli.command {
        Command::Prepare => {
            let dir = Path::new(&cfg.paths.corpus_dir);
            let mut docs = Vec::new();
            for l in Lang::ALL {
                let p = dir.join(format!("desk_{}.jsonl", l.code()));
                let mut d = load_docs(&p).with_context(|| format!("missing artifact: {l} corpus ({})", p.display()))?;
                if cfg.corpus.max_docs_per_lang > 0 {
                    d.truncate(cfg.corpus.max_docs_per_lang);
                }
                docs.extend(d);
            }
            let (train, held) = split_holdout(&docs, cfg.corpus.holdout, substream(root, "corpus"));
            for (rel, part) in [(PREPARED_TRAIN, &train), (PREPARED_EVAL, &held)] {
                let p = stage.path(rel);
                std::fs::create_dir_all(p.parent().expect("prepared dir"))?;
                write_corpus(&p, part)?;
                stage.outputs.push(p);
            }
            let bytes = Tokenizer::byte_level();
            let mut csv = String::from("split,lang,documents,bytes\n");
            for (name, part) in [("train", &train), ("eval", &held)] {
                let s = CorpusStats::measure(part, &bytes);
                for l in Lang::ALL {
                    csv.push_str(&format!("{name},{l},{},{}\n", s.documents[l], s.tokens[l]));
                }
            }
            stage.write("prepared/stats.csv", &csv)?;
        }
        Command::Tokenizer { vocab_size } => {
            if let Some(v) = vocab_size {
                cfg.tokenizer.vocab_size = *v;
            }
            let train = load_docs(&require(out, PREPARED_TRAIN, "prepared corpus")?)?;
            let tok = Tokenizer::train(&train, cfg.tokenizer.vocab_size)?;
            let p = stage.path(TOKENIZER);
            std::fs::create_dir_all(p.parent().expect("tokenizer dir"))?;
            tok.save(&p)?;
            stage.outputs.push(p);
            // Balancing only reorders by a fixed rule; it draws from the
            // corpus substream of seed 0 because this stage takes no seed.
            let balanced = balance_corpus(&train, &tok, substream(0, "corpus/balance"))?;
            let p = stage.path(BALANCED);
            write_corpus(&p, &balanced)?;
            stage.outputs.push(p);
            stage.write("tokenizer/stats.csv", &CorpusStats::measure(&balanced, &tok).to_csv())?;
        }
        Command::Teacher { steps } => {
            if let Some(s) = steps {
                cfg.teacher.train.steps = *s;
            }
            let data = load_data(out, cfg.teacher.model.context_len)?;
            let tc = cfg.teacher_config(data.tok.vocab_size());
            let (model, log) = train_teacher(&tc, data.train, &data.eval, &cfg.teacher.train, root)?;
            save_checkpoint(&model, meta(cfg.teacher.train.steps), &stage.path(TEACHER))?;
            stage.record_dir(TEACHER)?;
            stage.write("teacher/train.csv", &log.train_csv())?;
            stage.write("teacher/val.csv", &log.val_csv())?;
        }
        Command::Distill(a) => {
            apply_distill(&mut cfg, a);
            let teacher = load_teacher(out)?;
            let data = load_data(out, cfg.student.context_len)?;
            let sc = cfg.student_config(data.tok.vocab_size());
            let experts = distill_experts(&teacher, &sc, &data.train, &data.eval, &cfg.distill, root)?;
            for (l, (model, log)) in experts.iter() {
                let rel = format!("{STUDENTS}/expert_{l}");
                save_checkpoint(model, meta(cfg.distill.steps), &stage.path(&rel))?;
                stage.record_dir(&rel)?;
                stage.write(&format!("{STUDENTS}/metrics_{l}.csv"), &log.metrics_csv())?;
                stage.write(&format!("{STUDENTS}/evals_{l}.csv"), &log.evals_csv())?;
            }
        }
        Command::Router => {
            let train = load_docs(&require(out, PREPARED_TRAIN, "prepared corpus")?)?;
            let held = load_docs(&require(out, PREPARED_EVAL, "held-out corpus")?)?;
            let router = Router::train(&train, &cfg.router, substream(root, "sgd"))?;
            let m = router.evaluate(&held)?;
            let p = stage.path(ROUTER);
            std::fs::create_dir_all(p.parent().expect("router dir"))?;
            router.save(&p)?;
            stage.outputs.push(p);
            stage.write("router/metrics.csv", &m.to_csv("logistic_regression"))?;
            stage.write("router/confusion.csv", &m.confusion_csv())?;
        }
        Command::MoeTrain { setup, distill } => {
            apply_distill(&mut cfg, distill);
            if let Some(s) = setup {
                cfg.moe.setup = *s;
            }
            let router = match out.join(ROUTER).exists() {
                true => Some(Router::load(&out.join(ROUTER))?),
                false => None,
            };
            let setup = cfg.moe.setup;
            let system = match setup {
                Setup::Ple => {
                    let mut students = Vec::new();
                    for l in Lang::ALL {
                        let rel = format!("{STUDENTS}/expert_{l}");
                        students.push(load_checkpoint(&require(out, &rel, "student checkpoint")?)?.0);
                    }
                    build_ple(PerLang(students.try_into().expect("four students")), router)?
                }
                Setup::Jeet | Setup::MoeCe => {
                    let teacher = load_teacher(out)?;
                    let data = load_data(out, cfg.student.context_len)?;
                    let sc = cfg.student_config(data.tok.vocab_size());
                    let train = if setup == Setup::Jeet { train_jeet } else { train_moe_ce };
                    let (mut system, log) = train(&teacher, &sc, &data.train, &data.eval, &cfg.distill, root)?;
                    if let Some(r) = router {
                        system.set_router(r);
                    }
                    stage.write(&format!("moe/{setup}_metrics.csv"), &log.metrics_csv())?;
                    stage.write(&format!("moe/{setup}_evals.csv"), &log.evals_csv())?;
                    system
                }
            };
            let rel = format!("moe/{setup}");
            let tok = out.join(TOKENIZER);
            save_bundle(&system, &stage.path(&rel), Some(&tok), meta(cfg.distill.steps))?;
            stage.record_dir(&rel)?;
            manifest_name = format!("moe-train-{setup}");
        }
        Command::MoeEval {
            setup,
            routable,
            use_common,
            settings_grid,
        } => {
            if let Some(s) = setup {
                cfg.moe.setup = *s;
            }
            if let Some(r) = routable {
                cfg.moe.routable = r.clone();
            }
            if let Some(u) = use_common {
                cfg.moe.use_common = *u;
            }
            let setup = cfg.moe.setup;
            let (system, _) = load_bundle(&require(out, &format!("moe/{setup}"), &format!("{setup} bundle"))?)?;
            let data = load_data(out, system.model_config().context_len)?;
            let has_common = system.common().is_some();
            let grid: Vec<InferenceSettings> = match settings_grid {
                Some(Grid::Full) => standard_grid().into_iter().filter(|s| has_common || !s.use_common).collect(),
                None => vec![InferenceSettings {
                    routable: InferenceSettings::parse_routable(&cfg.moe.routable)?,
                    use_common: cfg.moe.use_common && has_common,
                }],
            };
            let routing = if routing_choice(&cfg)? {
                if system.router().is_none() {
                    bail!("missing artifact: router (bundle moe/{setup} was built without one)");
                }
                Routing::Trained(&data.tok)
            } else {
                Routing::Oracle
            };
            let rows = system.evaluate_grid(&data.eval, &grid, routing, cfg.distill.eval_sequences)?;
            stage.write(&format!("eval/{setup}.csv"), &grid_csv(&rows))?;
            manifest_name = format!("moe-eval-{setup}");
        }
        Command::Study { name, distill } => {
            apply_distill(&mut cfg, distill);
            let teacher = load_teacher(out)?;
            let data = load_data(out, cfg.student.context_len)?;
            let sc = cfg.student_config(data.tok.vocab_size());
            let dir = format!("study/{}", name.name());
            match name {
                Study::Forgetting => {
                    let ck = stage.path(&format!("{dir}/experts"));
                    std::fs::create_dir_all(&ck)?;
                    let s = run_forgetting_study(&teacher, &sc, &data.train, &data.eval, &cfg.distill, root, Some(&ck))?;
                    stage.record_dir(&format!("{dir}/experts"))?;
                    stage.write(&format!("{dir}/fk_table.csv"), &s.table_csv())?;
                    stage.write(&format!("{dir}/fk_long.csv"), &s.long_csv())?;
                    stage.write(&format!("{dir}/curves.csv"), &s.curves_csv())?;
                }
                Study::Alpha => {
                    let settings: Vec<AlphaSetting> =
                        cfg.study.alpha_settings.iter().map(|s| parse_alpha(s)).collect::<Result<_>>()?;
                    let r = run_alpha_study(&teacher, &sc, &data.train, &data.eval, &cfg.distill, &settings, root)?;
                    study_csvs(&mut stage, &dir, "alpha", &r)?;
                }
                Study::LossMode => {
                    let r = run_loss_mode_study(&teacher, &sc, &data.train, &data.eval, &cfg.distill, root)?;
                    study_csvs(&mut stage, &dir, "loss_mode", &r)?;
                }
                Study::Moe => {
                    let router = if routing_choice(&cfg)? {
                        Some(Router::load(&require(out, ROUTER, "router")?)?)
                    } else {
                        None
                    };
                    let routing = match router {
                        Some(_) => Routing::Trained(&data.tok),
                        None => Routing::Oracle,
                    };
                    let c = run_moe_comparison(
                        &teacher,
                        &sc,
                        &data.train,
                        &data.eval,
                        &cfg.distill,
                        root,
                        router.as_ref(),
                        routing,
                    )?;
                    stage.write(&format!("{dir}/comparison.csv"), &c.to_csv())?;
                    stage.write(&format!("{dir}/common_grid.csv"), &grid_csv(&c.grid))?;
                    for (setup, log) in &c.logs {
                        stage.write(&format!("{dir}/{setup}_metrics.csv"), &log.metrics_csv())?;
                    }
                }
            }
            manifest_name = format!("study-{}", name.name());
        }
    }
    stage.finish(&manifest_name, &cfg, seed, threads)
}

/// Loads a saved MoE bundle; exposed for tooling built on the CLI layout.
pub fn open_bundle(out: &Path, setup: Setup) -> Result<MoESystem> {
    Ok(load_bundle(&require(out, &format!("moe/{setup}"), &format!("{setup} bundle"))?)?.0)
}
