mod common;

use modmoe::corpus::{BatchMode, BatchStream, Lang, PerLang};
use modmoe::model::{
    accumulate_step, evaluate_ce, load_checkpoint, save_checkpoint, train_teacher, CheckpointMeta, ModelConfig,
    TrainConfig, TransformerLM,
};
use modmoe::numerics::{AdamW, AdamWConfig, Rng};
use modmoe::Error;

fn tiny(vocab: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        context_len: 8,
        vocab_size: vocab,
        tie_embeddings: true,
    }
}

fn random_seqs(n: usize, len: usize, vocab: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| (0..len).map(|_| rng.below(vocab) as u32).collect()).collect()
}

/// Sequences with an obvious pattern (counting mod vocab) so a few steps
/// of training show a learning signal.
fn pattern_seqs(n: usize, len: usize, vocab: usize) -> Vec<Vec<u32>> {
    (0..n)
        .map(|i| (0..len).map(|t| ((i + t) % vocab) as u32).collect())
        .collect()
}

fn one_lang(seqs: Vec<Vec<u32>>) -> PerLang<Vec<Vec<u32>>> {
    let mut p = PerLang::default();
    p[Lang::En] = seqs;
    p
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let model = TransformerLM::<f32>::new(tiny(20), true, &mut Rng::new(1)).unwrap();
    let meta = CheckpointMeta { seed: 9, step: 42 };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    save_checkpoint(&model, meta, &a).unwrap();
    let (loaded, m2) = load_checkpoint(&a).unwrap();
    assert_eq!(m2, meta);
    assert_eq!(loaded, model);
    save_checkpoint(&loaded, m2, &b).unwrap();
    for f in ["manifest.json", "params.bin"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let seqs = random_seqs(3, 8, 20, 2);
    let before = evaluate_ce(&model, None, &seqs).unwrap();
    let after = evaluate_ce(&loaded, None, &seqs).unwrap();
    assert_eq!(before.nll.to_bits(), after.nll.to_bits());
}

#[test]
fn corrupted_manifest_names_the_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let model = TransformerLM::<f32>::new(tiny(20), true, &mut Rng::new(1)).unwrap();
    save_checkpoint(&model, CheckpointMeta::default(), dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let mut manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    manifest["tensors"][3]["shape"] = serde_json::json!([16, 47]);
    std::fs::write(&path, manifest.to_string()).unwrap();
    let err = load_checkpoint(dir.path()).unwrap_err();
    assert!(err.to_string().contains("h0.ln1.b") || err.to_string().contains("h0.attn.wqkv"), "{err}");
    assert!(matches!(err, Error::Checkpoint { .. }));
}

#[test]
fn accumulation_matches_one_large_batch() {
    let config = tiny(12);
    let base = TransformerLM::<f64>::new(config, true, &mut Rng::new(3)).unwrap();
    let seqs = random_seqs(8, 8, 12, 4);
    let mut stream = BatchStream::new(one_lang(seqs.clone()), 8, 2, BatchMode::PerLanguage, 5).unwrap();
    let micro: Vec<_> = (0..4).map(|_| stream.next_batch()).collect();
    let big = modmoe::Batch {
        tokens: micro.iter().flat_map(|b| b.tokens.clone()).collect(),
        langs: vec![Lang::En; 8],
        mask: vec![true; 64],
        batch_size: 8,
        context_len: 8,
    };
    let mut acc = base.clone();
    for b in &micro {
        accumulate_step(&mut acc, b, 0.25).unwrap();
    }
    let mut once = base.clone();
    accumulate_step(&mut once, &big, 1.0).unwrap();
    for (a, b) in acc.params.iter().zip(once.params.iter()) {
        for (x, y) in a.tensor.grad().unwrap().iter().zip(b.tensor.grad().unwrap()) {
            assert!((x - y).abs() < 1e-6, "{}: {x} vs {y}", a.name);
        }
    }
}

#[test]
fn one_small_step_does_not_increase_batch_loss() {
    let config = tiny(16);
    let mut successes = 0;
    for trial in 0..20 {
        let mut model = TransformerLM::<f32>::new(config, true, &mut Rng::new(100 + trial)).unwrap();
        let seqs = random_seqs(4, 8, 16, 200 + trial);
        let mut stream = BatchStream::new(one_lang(seqs), 8, 4, BatchMode::PerLanguage, trial).unwrap();
        let batch = stream.next_batch();
        let mut opt = AdamW::new(AdamWConfig::default(), &model.params);
        let before = accumulate_step(&mut model, &batch, 1.0).unwrap();
        opt.step(&mut model.params, 1e-3).unwrap();
        let after = accumulate_step(&mut model, &batch, 1.0).unwrap();
        model.params.zero_grad();
        if after <= before {
            successes += 1;
        }
    }
    assert!(successes >= 18, "{successes}/20");
}

#[test]
fn teacher_training_learns_and_is_deterministic() {
    let vocab = 24;
    let config = tiny(vocab);
    let train = one_lang(pattern_seqs(64, 8, vocab));
    let eval = one_lang(pattern_seqs(4, 8, vocab));
    let hyper = TrainConfig {
        steps: 200,
        micro_batch: 4,
        accumulation: 2,
        optimizer: AdamWConfig {
            lr: 3e-3,
            warmup_steps: 10,
            ..AdamWConfig::default()
        },
        eval_every: 50,
        eval_sequences: 0,
    };
    let (m1, log) = train_teacher(&config, train.clone(), &eval, &hyper, 7).unwrap();
    let uniform = (vocab as f64).ln();
    let last = log.train.last().unwrap().1;
    assert!(last < uniform, "{last} vs {uniform}");
    assert_eq!(log.val.len(), 4);
    assert!(log.val.last().unwrap().2 < uniform);

    let (m2, _) = train_teacher(&config, train, &eval, &hyper, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&m1, CheckpointMeta::default(), &dir.path().join("a")).unwrap();
    save_checkpoint(&m2, CheckpointMeta::default(), &dir.path().join("b")).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("a/params.bin")).unwrap(),
        std::fs::read(dir.path().join("b/params.bin")).unwrap()
    );
}
