use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

/// Sparse vector as `(feature, value)` pairs sorted by feature.
pub type SparseVec = Vec<(usize, f64)>;

/// Lowercased runs of alphanumerics/underscore, plus every other
/// non-whitespace character as its own token.
pub fn terms(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdf {
    /// Term of each feature; features are numbered in sorted term order.
    pub vocabulary: Vec<String>,
    pub idf: Vec<f64>,
    index: HashMap<String, usize>,
}

impl TfIdf {
    /// Keeps terms occurring in at least two documents, weighted by
    /// `idf(t) = ln((1+N)/(1+df(t))) + 1`.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n = 0usize;
        for t in texts {
            n += 1;
            let mut seen = terms(t);
            seen.sort();
            seen.dedup();
            for term in seen {
                *df.entry(term).or_insert(0) += 1;
            }
        }
        if n == 0 {
            return Err(Error::Empty("tf-idf corpus"));
        }
        let (vocabulary, idf) = df
            .into_iter()
            .filter(|(_, d)| *d >= 2)
            .map(|(t, d)| (t, ((1 + n) as f64 / (1 + d) as f64).ln() + 1.0))
            .unzip();
        Ok(Self::from_parts(vocabulary, idf))
    }

    pub fn from_parts(vocabulary: Vec<String>, idf: Vec<f64>) -> Self {
        let index = vocabulary.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        TfIdf { vocabulary, idf, index }
    }

    pub fn num_features(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn feature(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    /// Raw term counts times idf, L2-normalized. Unknown terms are
    /// dropped; a text without known terms maps to the empty vector.
    pub fn vectorize(&self, text: &str) -> SparseVec {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in terms(text) {
            if let Some(i) = self.feature(&t) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let mut v: SparseVec = counts.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|(_, x)| *x /= norm);
        }
        v
    }
}
