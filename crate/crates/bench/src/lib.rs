//! Shared fixtures for the benchmarks.

use std::path::Path;

use modmoe::corpus::{load_corpus, pack_by_language, BatchMode, BatchStream};
use modmoe::{Batch, Document, Lang, ModelConfig, Rng, Tokenizer, TransformerLM};

pub const VOCAB: usize = 512;
pub const CONTEXT: usize = 64;

/// Every `stride`-th document of the bundled desk corpora.
pub fn desk_sample(stride: usize) -> Vec<Document> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let mut docs = Vec::new();
    for l in Lang::ALL {
        let all = load_corpus(&data.join(format!("desk_{}.jsonl", l.code()))).expect("desk corpus");
        docs.extend(all.into_iter().step_by(stride));
    }
    docs
}

pub fn tokenizer(docs: &[Document]) -> Tokenizer {
    Tokenizer::train(docs, VOCAB).expect("tokenizer trains")
}

pub fn student() -> TransformerLM<f32> {
    let cfg = ModelConfig {
        context_len: CONTEXT,
        ..ModelConfig::student(VOCAB)
    };
    TransformerLM::new(cfg, true, &mut Rng::new(1)).expect("model builds")
}

pub fn batch(docs: &[Document], tok: &Tokenizer, batch_size: usize) -> Batch {
    let seqs = pack_by_language(docs, tok, CONTEXT, false);
    BatchStream::new(seqs, CONTEXT, batch_size, BatchMode::Mixed, 1)
        .expect("enough text for a batch")
        .next_batch()
}
