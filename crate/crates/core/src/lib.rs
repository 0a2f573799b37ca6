//! Modular multilingual language models built from distilled per-language
//! experts.
//!
//! The crate covers the whole pipeline: corpus preparation and byte-level
//! BPE, a small autodiff engine and GPT-2 style decoder, reverse-KL
//! distillation, a TF-IDF sequence router, three mixture-of-experts
//! wirings, and the studies that compare them.

pub mod corpus;
pub mod distill;
pub mod experiments;
pub mod gradcheck;
pub mod error;
pub mod numerics;
pub mod router;
pub mod model;
pub mod moe;
pub mod tokenizer;

pub use corpus::{Batch, BatchMode, BatchStream, CorpusStats, Document, Lang, PerLang};
pub use error::{Error, Result};
pub use model::{ModelConfig, TransformerLM};
pub use numerics::{Rng, Tape, Tensor, Var};
pub use tokenizer::Tokenizer;
