#![allow(dead_code)]

use modmoe::numerics::Rng;

pub fn data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// All four bundled desk corpora, concatenated in class order.
pub fn desk_corpus() -> Vec<modmoe::Document> {
    let mut docs = Vec::new();
    for l in modmoe::Lang::ALL {
        let p = data_dir().join(format!("desk_{}.jsonl", l.code()));
        docs.extend(modmoe::corpus::load_corpus(&p).unwrap());
    }
    docs
}

pub const TOY_VOCAB: usize = 40;

pub fn toy_config(d: usize) -> modmoe::ModelConfig {
    modmoe::ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: d,
        d_ff: 2 * d,
        context_len: 8,
        vocab_size: TOY_VOCAB,
        tie_embeddings: true,
    }
}

/// Each language counts upward with its own stride, so the four are
/// distinguishable and learnable.
pub fn toy_corpus(n: usize) -> modmoe::PerLang<Vec<Vec<u32>>> {
    modmoe::PerLang::from_fn(|l| {
        let stride = l.index() + 1;
        (0..n)
            .map(|i| (0..8).map(|t| ((i + stride * t) % TOY_VOCAB) as u32).collect())
            .collect()
    })
}

pub fn toy_teacher() -> modmoe::TransformerLM<f32> {
    modmoe::TransformerLM::new(toy_config(16), true, &mut Rng::new(3)).unwrap()
}

pub fn toy_distill(steps: usize) -> modmoe::distill::DistillConfig {
    modmoe::distill::DistillConfig {
        steps,
        batch_size: 2,
        optimizer: modmoe::numerics::AdamWConfig {
            lr: 1e-2,
            warmup_steps: 0,
            ..Default::default()
        },
        eval_every: 0,
        eval_sequences: 0,
        ..Default::default()
    }
}
