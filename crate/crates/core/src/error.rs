use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::Lang;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {shapes}")]
    Shape { op: &'static str, shapes: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient in parameter '{0}'")]
    NonFiniteGradient(String),

    #[error("malformed record at line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("unknown language '{value}' at line {line}")]
    UnknownLanguage { value: String, line: usize },

    #[error("missing language: {}", join_langs(.0))]
    MissingLanguages(Vec<Lang>),

    #[error("tokenized corpus has {tokens} tokens, shorter than one context window of {context_len}")]
    CorpusTooShort { tokens: usize, context_len: usize },

    #[error("corpus only supports a vocabulary of {achievable} (requested {requested})")]
    VocabUnreachable { requested: usize, achievable: usize },

    #[error("token id {0} is outside the vocabulary")]
    TokenOutOfRange(u32),

    #[error("sequence length {len} exceeds context length {context_len}")]
    ContextOverflow { len: usize, context_len: usize },

    #[error("every position is masked; loss is undefined")]
    AllMasked,

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("vocabulary mismatch: {0} vs {1}")]
    VocabMismatch(usize, usize),

    #[error("checkpoint tensor '{name}': {reason}")]
    Checkpoint { name: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("classifier needs at least two classes, found {0}")]
    SingleClass(usize),

    #[error("no expert is available for routing")]
    NothingRoutable,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn join_langs(langs: &[Lang]) -> String {
    langs
        .iter()
        .map(|l| l.code())
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn shape(op: &'static str, shapes: impl Into<String>) -> Self {
        Error::Shape {
            op,
            shapes: shapes.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
