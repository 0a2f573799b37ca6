//! Acceptance suite: one pass/fail line per criterion, tolerances pinned
//! below. Run with `--nocapture` to see the report.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use modmoe::corpus::{balance_corpus, load_corpus, pack_by_language, split_holdout, BatchMode, BatchStream};
use modmoe::distill::{rkl_value, DistillConfig};
use modmoe::experiments::{
    common_expert_pairs, forgotten_knowledge, identity_holds, run_arm, run_forgetting_study, Experiment,
};
use modmoe::model::{evaluate_ce, load_checkpoint, sequence_nll, train_teacher, ModelConfig, TrainConfig};
use modmoe::moe::{fingerprint, standard_grid, train_moe_ce, MoeTrainer, Routing, Setup};
use modmoe::numerics::{AdamWConfig, Rng};
use modmoe::router::{ClassifierConfig, Route, Router};
use modmoe::{Document, Lang, PerLang, Tokenizer, TransformerLM};

const GRAD_INSTANCES: u64 = 10;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const RKL_PAIRS: usize = 100;
const RKL_ZERO_TOL: f64 = 1e-7;
const RKL_HAND: f64 = 0.3681;
const RKL_HAND_TOL: f64 = 1e-4;
const SNIPPETS: usize = 1000;
const ROUTER_FLOOR: f64 = 0.95;
const ROUTER_MIN_SUPPORT: usize = 2000;
const ROUTER_BUDGET: Duration = Duration::from_secs(300);
const PHASE_STEPS: usize = 300;
const FK_ABS_TOL: f64 = 0.001;
const FK_PCT_TOL: f64 = 0.1;
const GRID_BUDGET: Duration = Duration::from_secs(600);

const VOCAB: usize = 512;
const CONTEXT: usize = 32;
const EVAL_SEQS: usize = 64;

type Outcome = Result<String, String>;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn desk_corpus() -> Vec<Document> {
    let mut docs = Vec::new();
    for l in Lang::ALL {
        docs.extend(load_corpus(&data_dir().join(format!("desk_{}.jsonl", l.code()))).unwrap());
    }
    docs
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

/// Tokenizer, packed splits and a briefly trained teacher shared by the
/// training criteria. The router used alongside it sees the same split.
struct Fixture {
    tok: Tokenizer,
    train: PerLang<Vec<Vec<u32>>>,
    eval: PerLang<Vec<Vec<u32>>>,
    teacher: TransformerLM<f32>,
    student: ModelConfig,
}

fn fixture(docs: &[Document]) -> Fixture {
    let (train_docs, held_docs) = split_holdout(docs, 0.25, 11);
    let sample: Vec<Document> = train_docs.iter().step_by(6).cloned().collect();
    let tok = Tokenizer::train(&sample, VOCAB).unwrap();
    let balanced = balance_corpus(&train_docs, &tok, 12).unwrap();
    let train = pack_by_language(&balanced, &tok, CONTEXT, false);
    let eval = pack_by_language(&held_docs, &tok, CONTEXT, false);
    let teacher_cfg = ModelConfig {
        context_len: CONTEXT,
        ..ModelConfig::teacher(VOCAB)
    };
    let hyper = TrainConfig {
        steps: 150,
        micro_batch: 8,
        accumulation: 2,
        eval_every: 0,
        eval_sequences: EVAL_SEQS,
        optimizer: AdamWConfig {
            lr: 2e-3,
            warmup_steps: 10,
            ..AdamWConfig::default()
        },
    };
    let (teacher, _) = train_teacher(&teacher_cfg, train.clone(), &eval, &hyper, 13).unwrap();
    Fixture {
        tok,
        train,
        eval,
        teacher,
        student: ModelConfig {
            context_len: CONTEXT,
            ..ModelConfig::student(VOCAB)
        },
    }
}

fn distill_cfg(steps: usize) -> DistillConfig {
    DistillConfig {
        steps,
        batch_size: 8,
        eval_every: 100,
        eval_sequences: EVAL_SEQS,
        optimizer: AdamWConfig {
            lr: 2e-3,
            warmup_steps: 20,
            ..AdamWConfig::default()
        },
        ..DistillConfig::default()
    }
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let results = modmoe::gradcheck::suite(GRAD_INSTANCES).map_err(e)?;
    let elapsed = t.elapsed();
    let worst = results.iter().max_by(|a, b| a.worst.total_cmp(&b.worst)).ok_or("no ops checked")?;
    for r in &results {
        ensure(r.instances >= GRAD_INSTANCES, format!("{} ran {} instances", r.op, r.instances))?;
        ensure(r.passed(), format!("{} relative error {:e}", r.op, r.worst))?;
    }
    ensure(elapsed < GRAD_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} ops x {GRAD_INSTANCES} instances, worst {} {:.1e}, {:.1?}",
        results.len(),
        worst.op,
        worst.worst,
        elapsed
    ))
}

fn c2_rkl() -> Outcome {
    let mut rng = Rng::new(2024);
    let mut min = f64::INFINITY;
    for _ in 0..RKL_PAIRS {
        let (n, v) = (1 + rng.below(4), 2 + rng.below(30));
        let s: Vec<f64> = (0..n * v).map(|_| rng.normal(3.0)).collect();
        let t: Vec<f64> = (0..n * v).map(|_| rng.normal(3.0)).collect();
        let kl = rkl_value(&s, &t, v, &vec![true; n]).map_err(e)?;
        min = min.min(kl);
        let same = rkl_value(&s, &s, v, &vec![true; n]).map_err(e)?;
        ensure(same.abs() < RKL_ZERO_TOL, format!("KL(q||q) = {same:e}"))?;
    }
    ensure(min >= 0.0, format!("negative divergence {min:e}"))?;
    let hand = rkl_value(&[0.9f64.ln(), 0.1f64.ln()], &[0.0, 0.0], 2, &[true]).map_err(e)?;
    ensure((hand - RKL_HAND).abs() < RKL_HAND_TOL, format!("hand example {hand}"))?;
    Ok(format!("min over {RKL_PAIRS} pairs {min:.3e}, hand example {hand:.5}"))
}

fn c3_identity(f: &Fixture) -> Outcome {
    let arm = run_arm(&f.teacher, &f.student, &f.train, &f.eval, &distill_cfg(60), 3, "combined").map_err(e)?;
    ensure(identity_holds(&arm.log), "logged total differs from alpha*lm + (1-alpha)*kd")?;
    Ok(format!("{} steps, bit-exact", arm.log.rows.len()))
}

fn c4_tokenizer(docs: &[Document]) -> Outcome {
    let sample: Vec<Document> = docs.iter().step_by(10).cloned().collect();
    let a = Tokenizer::train(&sample, VOCAB).map_err(e)?;
    let b = Tokenizer::train(&sample, VOCAB).map_err(e)?;
    ensure(a.to_json() == b.to_json(), "two training runs differ")?;
    let mut rng = Rng::new(4);
    for i in 0..SNIPPETS {
        let text = &docs[rng.below(docs.len())].text;
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let start = rng.below(chars.len());
        let len = 1 + rng.below(200);
        let from = chars[start].0;
        let to = chars.get(start + len).map_or(text.len(), |c| c.0);
        let snippet = &text[from..to];
        let back = a.decode(&a.encode(snippet)).map_err(e)?;
        ensure(back == snippet, format!("snippet {i} did not round-trip: {snippet:?}"))?;
    }
    Ok(format!("{SNIPPETS} snippets round-trip, {} merges identical", a.merges().len()))
}

fn c5_router(docs: &[Document]) -> Outcome {
    let (train, held) = split_holdout(docs, 0.25, 5);
    let t = Instant::now();
    let router = Router::train(&train, &ClassifierConfig::default(), 5).map_err(e)?;
    let m = router.evaluate(&held).map_err(e)?;
    let elapsed = t.elapsed();
    for l in Lang::ALL {
        let support = held.iter().filter(|d| d.lang == l).count();
        ensure(support >= ROUTER_MIN_SUPPORT, format!("{l}: only {support} held-out samples"))?;
        ensure(m.support(l) == support, format!("{l}: confusion row sums to {}, support {support}", m.support(l)))?;
    }
    for (name, v) in [("accuracy", m.accuracy), ("precision", m.precision), ("recall", m.recall), ("f1", m.f1)] {
        ensure(v >= ROUTER_FLOOR, format!("{name} {v:.4}"))?;
    }
    ensure(elapsed < ROUTER_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!(
        "acc {:.4} P {:.4} R {:.4} F1 {:.4} on {} held out, {:.1?}",
        m.accuracy,
        m.precision,
        m.recall,
        m.f1,
        held.len(),
        elapsed
    ))
}

/// Criteria 6 and 7 share the forgetting study: its experiment C experts
/// are the PLE system under test.
fn c6_c7(f: &Fixture, router: Router) -> (Outcome, Outcome) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = distill_cfg(PHASE_STEPS);
    let study = match run_forgetting_study(&f.teacher, &f.student, &f.train, &f.eval, &cfg, 7, Some(dir.path())) {
        Ok(s) => s,
        Err(err) => return (Err(err.to_string()), Err(err.to_string())),
    };
    let c7 = (|| {
        let (abs, pct) = forgotten_knowledge(4.158, 4.657);
        ensure(
            (abs - 0.499).abs() <= FK_ABS_TOL && (pct - 12.0).abs() <= FK_PCT_TOL,
            format!("arithmetic gives ({abs}, {pct})"),
        )?;
        let a = study.record(Experiment::ASequential);
        let first = a.per_lang[Lang::En].ok_or("no English record in A")?;
        ensure(first.forgotten_abs > 0.0, format!("A: English FK {}", first.cell()))?;
        ensure(a.per_lang[Lang::Py].is_none(), "A: Python should be N/A")?;
        for ex in [Experiment::BSingleSession, Experiment::CMoe] {
            for l in Lang::ALL {
                let r = study.record(ex).per_lang[l].ok_or(format!("{ex:?}: no {l} record"))?;
                ensure(
                    r.loss_final.to_bits() == r.loss_at_phase_end.to_bits() && r.forgotten_abs == 0.0,
                    format!("{ex:?} {l}: FK {}", r.cell()),
                )?;
            }
        }
        let cells: Vec<String> = [Lang::En, Lang::Fr, Lang::De]
            .iter()
            .map(|&l| format!("{l} {}", a.per_lang[l].map_or("N/A".into(), |r| r.cell())))
            .collect();
        Ok(format!("A: {}; B and C exactly 0", cells.join(", ")))
    })();
    let c6 = (|| {
        let mut system = study.ple.clone();
        system.set_router(router);
        let oracle = system.evaluate(&f.eval, Routing::Oracle, EVAL_SEQS).map_err(e)?;
        let (mut routed, mut total) = (0usize, 0usize);
        for l in Lang::ALL {
            let (standalone, _) = load_checkpoint(&dir.path().join(format!("expert_{l}"))).map_err(e)?;
            let seqs = &f.eval[l][..EVAL_SEQS.min(f.eval[l].len())];
            let want = evaluate_ce(&standalone, None, seqs).map_err(e)?;
            let got = oracle[l].ok_or(format!("no oracle result for {l}"))?;
            ensure(
                got.nll.to_bits() == want.nll.to_bits() && got.tokens == want.tokens,
                format!("{l}: oracle {} vs standalone {}", got.mean(), want.mean()),
            )?;
            let served = system.infer(seqs, None, Routing::Trained(&f.tok)).map_err(e)?;
            for (s, seq) in served.iter().zip(seqs) {
                total += 1;
                if s.route != Route::Expert(l) {
                    continue;
                }
                routed += 1;
                let alone = standalone.logits(None, seq, 1, seq.len()).map_err(e)?;
                let (a, b) = (sequence_nll(&s.logits, VOCAB, seq), sequence_nll(&alone, VOCAB, seq));
                ensure(a.to_bits() == b.to_bits(), format!("{l}: routed nll {a} vs standalone {b}"))?;
            }
        }
        Ok(format!("oracle bit-exact on 4 languages; {routed}/{total} correctly routed, all bit-exact"))
    })();
    (c6, c7)
}

fn c8_common(f: &Fixture, router: Router) -> Outcome {
    let (mut system, _) = train_moe_ce(&f.teacher, &f.student, &f.train, &f.eval, &distill_cfg(150), 8).map_err(e)?;
    system.set_router(router);
    let t = Instant::now();
    let grid = system
        .evaluate_grid(&f.eval, &standard_grid(), Routing::Trained(&f.tok), EVAL_SEQS)
        .map_err(e)?;
    let elapsed = t.elapsed();
    let pairs = common_expert_pairs(&grid);
    ensure(pairs.len() == 8, format!("{} paired rows", pairs.len()))?;
    let mut min_gap = f64::INFINITY;
    for (with, without) in pairs {
        let (w, wo) = (with.overall().ok_or("empty row")?, without.overall().ok_or("empty row")?);
        let label = with.settings.routable_label();
        ensure(w <= wo, format!("{label}: with common {w:.3} > without {wo:.3}"))?;
        if with.settings.routable.len() < Lang::ALL.len() {
            ensure(w < wo, format!("{label}: no strict gain ({w:.3} vs {wo:.3})"))?;
            min_gap = min_gap.min(wo - w);
        }
    }
    ensure(elapsed < GRID_BUDGET, format!("grid took {elapsed:?}"))?;
    Ok(format!("8 paired rows hold, smallest subset gap {min_gap:.3} ppl, grid in {elapsed:.1?}"))
}

fn c9_isolation(f: &Fixture) -> Outcome {
    let cfg = distill_cfg(10);
    for setup in [Setup::Jeet, Setup::MoeCe] {
        for lang in Lang::ALL {
            let mut tr = MoeTrainer::new(&f.teacher, &f.student, setup, &cfg, 9).map_err(e)?;
            let before = PerLang::from_fn(|l| fingerprint(&tr.expert(l).params));
            let mut stream =
                BatchStream::new(f.train.clone(), CONTEXT, cfg.batch_size, BatchMode::PerLanguage, 9).map_err(e)?;
            let batch = stream.next_for(lang).map_err(e)?;
            tr.step(&batch).map_err(e)?;
            for l in Lang::ALL {
                let same = fingerprint(&tr.expert(l).params) == before[l];
                ensure(same == (l != lang), format!("{setup}: expert {l} after a {lang} step (unchanged: {same})"))?;
            }
        }
    }
    Ok("jeet and moe-ce, every language: only the routed expert moved".into())
}

fn run_pipeline(dir: &Path, config: &Path) -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_modmoe");
    let steps: Vec<Vec<&str>> = vec![
        vec!["prepare"],
        vec!["tokenizer"],
        vec!["teacher"],
        vec!["distill"],
        vec!["router"],
        vec!["moe-train", "--setup", "ple"],
        vec!["moe-train", "--setup", "moe-ce"],
        vec!["moe-eval", "--setup", "moe-ce", "--settings-grid", "full"],
        vec!["study", "forgetting"],
        vec!["study", "loss-mode"],
    ];
    for args in steps {
        let out = Command::new(bin)
            .args(&args)
            .args(["--seed", "10", "--out"])
            .arg(dir)
            .arg("--config")
            .arg(config)
            .output()
            .map_err(e)?;
        ensure(
            out.status.success(),
            format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr).trim()),
        )?;
    }
    Ok(())
}

fn csv_files(root: &Path) -> Vec<PathBuf> {
    fn walk(d: &Path, out: &mut Vec<PathBuf>) {
        for entry in std::fs::read_dir(d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(&p, out);
            } else if p.extension().map_or(false, |x| x == "csv") {
                out.push(p);
            }
        }
    }
    let mut out = Vec::new();
    walk(root, &mut out);
    out.sort();
    out
}

fn c10_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e)?;
    let config = tmp.path().join("config.json");
    let text = serde_json::json!({
        "paths.corpus_dir": data_dir().display().to_string(),
        "corpus.max_docs_per_lang": 600,
        "tokenizer.vocab_size": 320,
        "teacher.model.n_layers": 1,
        "teacher.model.d_model": 32,
        "teacher.model.d_ff": 64,
        "teacher.model.context_len": 32,
        "teacher.train.steps": 6,
        "teacher.train.eval_every": 3,
        "teacher.train.eval_sequences": 16,
        "student.d_model": 16,
        "student.d_ff": 32,
        "student.context_len": 32,
        "distill.steps": 6,
        "distill.eval_every": 3,
        "distill.eval_sequences": 16,
        "router.epochs": 40
    });
    std::fs::write(&config, text.to_string()).map_err(e)?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_pipeline(&a, &config)?;
    run_pipeline(&b, &config)?;
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    ensure(!fa.is_empty(), "no metric CSVs written")?;
    let rel = |root: &Path, v: &[PathBuf]| -> Vec<PathBuf> {
        v.iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect()
    };
    ensure(rel(&a, &fa) == rel(&b, &fb), "runs wrote different CSV sets")?;
    for (x, y) in fa.iter().zip(&fb) {
        let (bx, by) = (std::fs::read(x).map_err(e)?, std::fs::read(y).map_err(e)?);
        ensure(bx == by, format!("{} differs between runs", x.strip_prefix(&a).unwrap().display()))?;
    }
    Ok(format!("{} CSVs byte-identical across two seeded runs", fa.len()))
}

#[test]
fn acceptance() {
    let started = Instant::now();
    let docs = desk_corpus();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    results.push((1, "gradient suite", c1_gradients()));
    results.push((2, "reverse KL properties", c2_rkl()));
    results.push((4, "tokenizer round trip and determinism", c4_tokenizer(&docs)));
    results.push((5, "router metrics", c5_router(&docs)));
    let f = fixture(&docs);
    let router = Router::train(&split_holdout(&docs, 0.25, 11).0, &ClassifierConfig::default(), 14).unwrap();
    results.push((3, "combined-loss identity", c3_identity(&f)));
    let (c6, c7) = c6_c7(&f, router.clone());
    results.push((6, "routing correctness", c6));
    results.push((7, "catastrophic forgetting", c7));
    results.push((8, "common-expert benefit", c8_common(&f, router)));
    results.push((9, "joint-training isolation", c9_isolation(&f)));
    results.push((10, "end-to-end determinism", c10_determinism()));
    results.sort_by_key(|r| r.0);

    println!("acceptance ({:.0?})", started.elapsed());
    let mut failed = Vec::new();
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("  [PASS] {n:>2} {name}: {detail}"),
            Err(why) => {
                println!("  [FAIL] {n:>2} {name}: {why}");
                failed.push(*n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
