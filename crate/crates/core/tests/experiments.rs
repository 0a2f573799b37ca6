mod common;

use common::{toy_config, toy_corpus, toy_distill, toy_teacher};
use modmoe::corpus::Lang;
use modmoe::experiments::{
    common_expert_pairs, default_alpha_settings, identity_holds, run_alpha_study, run_forgetting_study,
    run_loss_mode_study, run_moe_comparison, Experiment, AlphaSetting,
};
use modmoe::moe::Routing;

#[test]
fn forgetting_study_shapes_and_zeros() {
    let t = toy_teacher();
    let dir = tempfile::tempdir().unwrap();
    let study = run_forgetting_study(&t, &toy_config(8), &toy_corpus(8), &toy_corpus(4), &toy_distill(4), 5, Some(dir.path())).unwrap();
    let a = study.record(Experiment::ASequential);
    assert!(a.per_lang[Lang::Py].is_none());
    for l in [Lang::En, Lang::Fr, Lang::De] {
        let f = a.per_lang[l].unwrap();
        assert!((f.forgotten_pct * f.loss_at_phase_end / 100.0 - f.forgotten_abs).abs() < 1e-9);
    }
    for e in [Experiment::BSingleSession, Experiment::CMoe] {
        for l in Lang::ALL {
            let f = study.record(e).per_lang[l].unwrap();
            assert_eq!(f.loss_final.to_bits(), f.loss_at_phase_end.to_bits(), "{e:?} {l}");
            assert_eq!(f.forgotten_abs, 0.0);
        }
    }
    let table = study.table_csv();
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().nth(4).unwrap().starts_with("py,N/A,0.000 (0.0%),0.000 (0.0%)"));
    assert_eq!(study.curves.len(), 6);
    assert!(dir.path().join("expert_de/params.bin").exists());
}

#[test]
fn forgetting_study_is_deterministic() {
    let t = toy_teacher();
    let run = || run_forgetting_study(&t, &toy_config(8), &toy_corpus(8), &toy_corpus(4), &toy_distill(3), 8, None).unwrap();
    let (x, y) = (run(), run());
    assert_eq!(x.table_csv(), y.table_csv());
    assert_eq!(x.long_csv(), y.long_csv());
    assert_eq!(x.curves_csv(), y.curves_csv());
}

#[test]
fn alpha_arms_share_batches_and_differ_only_in_alpha() {
    let t = toy_teacher();
    let r = run_alpha_study(&t, &toy_config(8), &toy_corpus(8), &toy_corpus(3), &toy_distill(4), &default_alpha_settings(), 2).unwrap();
    assert!(r.streams_identical());
    assert_eq!(r.arms.len(), 6);
    assert_eq!(r.to_csv().lines().next(), Some("setting,final_eval_ce,final_eval_ppl"));
    assert!(r.notes.iter().any(|n| n.starts_with("fixed_0.5")));
    assert!(r.arms.iter().all(|a| a.final_ce.is_finite()));
    let fixed = r.arm("fixed_0.1").unwrap();
    assert!(fixed.log.rows.iter().all(|row| row.alpha == 0.1));
    assert_ne!(r.arm("fixed_0.9").unwrap().final_ce, fixed.final_ce);
    assert!(run_alpha_study(&t, &toy_config(8), &toy_corpus(8), &toy_corpus(3), &toy_distill(1), &[AlphaSetting::Fixed(0.5)], 2).is_err());
}

#[test]
fn loss_mode_study_audits_the_combined_identity() {
    let t = toy_teacher();
    let r = run_loss_mode_study(&t, &toy_config(8), &toy_corpus(8), &toy_corpus(3), &toy_distill(6), 3).unwrap();
    assert!(r.streams_identical());
    assert!(identity_holds(&r.arm("combined").unwrap().log));
    assert!(r.notes[0].contains("4.305") && r.notes[0].contains("4.322"));
    let alt = &r.arm("alternating").unwrap().log.rows;
    assert_eq!(alt[0].loss_total, alt[0].loss_kd);
    assert_eq!(alt[1].loss_total, alt[1].loss_lm);
}

#[test]
fn moe_comparison_covers_three_setups_and_the_grid() {
    let t = toy_teacher();
    let c = run_moe_comparison(&t, &toy_config(8), &toy_corpus(8), &toy_corpus(3), &toy_distill(3), 4, None, Routing::Oracle).unwrap();
    assert_eq!(c.to_csv().lines().count(), 4);
    assert_eq!(c.grid.len(), 17);
    assert_eq!(common_expert_pairs(&c.grid).len(), 8);
    assert!(c.rows.iter().all(|(_, r)| r.overall().unwrap().is_finite()));
}
