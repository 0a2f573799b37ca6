mod common;

use modmoe::corpus::{BatchMode, BatchStream, Lang, PerLang};
use modmoe::distill::{distill, language_stream};
use modmoe::model::{evaluate_ce, CheckpointMeta};
use modmoe::moe::{
    build_ple, fingerprint, load_bundle, save_bundle, standard_grid, InferenceSettings, MoeTrainer, Routing, Setup,
};
use modmoe::Error;

use common::{toy_config as config, toy_corpus as corpus, toy_distill as cfg, toy_teacher as teacher};

#[test]
fn one_step_touches_only_the_routed_expert() {
    let t = teacher();
    for setup in [Setup::Jeet, Setup::MoeCe] {
        for lang in Lang::ALL {
            let mut tr = MoeTrainer::new(&t, &config(8), setup, &cfg(5), 11).unwrap();
            let before = PerLang::from_fn(|l| fingerprint(&tr.expert(l).params));
            let shared_before = tr.shared_embedding().clone();
            let common_before = tr.common().map(|c| fingerprint(&c.params));
            let mut stream = BatchStream::new(corpus(6), 8, 2, BatchMode::PerLanguage, 5).unwrap();
            let batch = stream.next_for(lang).unwrap();
            tr.step(&batch).unwrap();
            for l in Lang::ALL {
                let same = fingerprint(&tr.expert(l).params) == before[l];
                assert_eq!(same, l != lang, "{setup}: expert {l} after a {lang} step");
            }
            assert_ne!(tr.shared_embedding().data(), shared_before.data());
            assert_eq!(tr.common().map(|c| fingerprint(&c.params)) != common_before, setup == Setup::MoeCe);
        }
    }
}

#[test]
fn ple_rejects_joint_training() {
    let t = teacher();
    assert!(matches!(
        MoeTrainer::new(&t, &config(8), Setup::Ple, &cfg(1), 1),
        Err(Error::Config(_))
    ));
}

#[test]
fn joint_training_needs_every_language() {
    let t = teacher();
    let mut train = corpus(4);
    train[Lang::De].clear();
    let err = modmoe::moe::train_jeet(&t, &config(8), &train, &corpus(2), &cfg(2), 1).unwrap_err();
    assert!(matches!(err, Error::MissingLanguages(ref v) if v == &[Lang::De]));
}

#[test]
fn ple_oracle_matches_standalone_experts_bit_exactly() {
    let t = teacher();
    let train = corpus(8);
    let eval = corpus(5);
    let students = PerLang::from_fn(|l| {
        let mut s = language_stream(&train, l, 8, 2, 4).unwrap();
        distill(&t, &config(8), &mut s, &eval, &cfg(3), 4, l.code()).unwrap().0
    });
    let system = build_ple(students.clone(), None).unwrap();
    let got = system.evaluate(&eval, Routing::Oracle, 0).unwrap();
    for l in Lang::ALL {
        let want = evaluate_ce(&students[l], None, &eval[l]).unwrap();
        let got = got[l].unwrap();
        assert_eq!(got.tokens, want.tokens);
        assert_eq!(got.nll.to_bits(), want.nll.to_bits(), "{l}");
    }
}

#[test]
fn bundle_round_trip_preserves_every_setup() {
    let t = teacher();
    let train = corpus(6);
    let eval = corpus(3);
    let dir = tempfile::tempdir().unwrap();
    let (jeet, _) = modmoe::moe::train_jeet(&t, &config(8), &train, &eval, &cfg(2), 9).unwrap();
    let (moe, log) = modmoe::moe::train_moe_ce(&t, &config(8), &train, &eval, &cfg(2), 9).unwrap();
    assert_eq!(log.rows.len(), 8);
    let ple = build_ple(PerLang::from_fn(|_| teacher()), None).unwrap();
    for (name, system) in [("jeet", &jeet), ("moe", &moe), ("ple", &ple)] {
        let path = dir.path().join(name);
        save_bundle(system, &path, None, CheckpointMeta { seed: 9, step: 8 }).unwrap();
        let (loaded, tok) = load_bundle(&path).unwrap();
        assert_eq!(tok, None);
        assert_eq!(&loaded, system, "{name}");
    }
    let grid: Vec<InferenceSettings> = standard_grid();
    let (loaded, _) = load_bundle(&dir.path().join("moe")).unwrap();
    let a = moe.evaluate_grid(&eval, &grid, Routing::Oracle, 0).unwrap();
    let b = loaded.evaluate_grid(&eval, &grid, Routing::Oracle, 0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn joint_training_is_deterministic() {
    let t = teacher();
    let run = || modmoe::moe::train_moe_ce(&t, &config(8), &corpus(6), &corpus(2), &cfg(3), 21).unwrap();
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la.metrics_csv(), lb.metrics_csv());
}
