//! Sequence-level language router: TF-IDF features and a linear
//! classifier choosing which expert serves a whole input.

mod classifier;
mod metrics;
mod tfidf;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use classifier::{
    gradient, objective, train_classifier, ClassifierConfig, LinearClassifier, Trainer, CLASSES,
};
pub use metrics::RouterMetrics;
pub use tfidf::{terms, SparseVec, TfIdf};

use crate::corpus::{Document, Lang};
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

/// Which model serves a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Route {
    Expert(Lang),
    Common,
}

/// Routing rule shared by the trained and oracle routers: the predicted
/// class if its expert is available, else the common expert if present,
/// else the available class with the highest probability.
pub fn route_prediction(
    predicted: Lang,
    probs: &[f64; CLASSES],
    available: &[Lang],
    common_present: bool,
) -> Result<Route> {
    if available.contains(&predicted) {
        return Ok(Route::Expert(predicted));
    }
    if common_present {
        return Ok(Route::Common);
    }
    let mut best: Option<Lang> = None;
    for &l in Lang::ALL.iter().filter(|l| available.contains(l)) {
        if best.map_or(true, |b| probs[l.index()] > probs[b.index()]) {
            best = Some(l);
        }
    }
    best.map(Route::Expert).ok_or(Error::NothingRoutable)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Router {
    pub tfidf: TfIdf,
    pub classifier: LinearClassifier,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RouterFile {
    version: u32,
    class_order: Vec<Lang>,
    trainer: Trainer,
    vocabulary: Vec<String>,
    idf: Vec<f64>,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl Router {
    pub fn train(docs: &[Document], cfg: &ClassifierConfig, seed: u64) -> Result<Self> {
        let tfidf = TfIdf::fit(docs.iter().map(|d| d.text.as_str()))?;
        let xs: Vec<SparseVec> = docs.iter().map(|d| tfidf.vectorize(&d.text)).collect();
        let ys: Vec<Lang> = docs.iter().map(|d| d.lang).collect();
        let classifier = train_classifier(&xs, &ys, tfidf.num_features(), cfg, seed)?;
        Ok(Router { tfidf, classifier })
    }

    pub fn predict(&self, text: &str) -> (Lang, [f64; CLASSES]) {
        self.classifier.predict(&self.tfidf.vectorize(text))
    }

    pub fn route(&self, text: &str, available: &[Lang], common_present: bool) -> Result<Route> {
        if available.is_empty() && !common_present {
            return Err(Error::NothingRoutable);
        }
        let (lang, probs) = self.predict(text);
        route_prediction(lang, &probs, available, common_present)
    }

    pub fn evaluate(&self, docs: &[Document]) -> Result<RouterMetrics> {
        let truth: Vec<Lang> = docs.iter().map(|d| d.lang).collect();
        let predicted: Vec<Lang> = docs.iter().map(|d| self.predict(&d.text).0).collect();
        RouterMetrics::from_predictions(&truth, &predicted)
    }

    pub fn to_json(&self) -> String {
        let file = RouterFile {
            version: FORMAT_VERSION,
            class_order: Lang::ALL.to_vec(),
            trainer: self.classifier.trainer,
            vocabulary: self.tfidf.vocabulary.clone(),
            idf: self.tfidf.idf.clone(),
            weights: self.classifier.weights.clone(),
            bias: self.classifier.bias.clone(),
        };
        serde_json::to_string(&file).expect("router file serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let f: RouterFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if f.version != FORMAT_VERSION {
            return Err(format!("unsupported router version {}", f.version));
        }
        if f.class_order != Lang::ALL {
            return Err(format!("unexpected class order {:?}", f.class_order));
        }
        let n = f.vocabulary.len();
        if f.idf.len() != n || f.weights.len() != CLASSES || f.weights.iter().any(|w| w.len() != n) || f.bias.len() != CLASSES {
            return Err("router arrays disagree with the vocabulary size".into());
        }
        Ok(Router {
            tfidf: TfIdf::from_parts(f.vocabulary, f.idf),
            classifier: LinearClassifier {
                weights: f.weights,
                bias: f.bias,
                trainer: f.trainer,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|reason| Error::Checkpoint {
            name: path.display().to_string(),
            reason,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Lang::*;

    #[test]
    fn routing_rules() {
        let p = [0.3, 0.4, 0.1, 0.2];
        assert_eq!(route_prediction(Fr, &p, &Lang::ALL, false).unwrap(), Route::Expert(Fr));
        assert_eq!(route_prediction(Fr, &p, &[En, Py], true).unwrap(), Route::Common);
        assert_eq!(route_prediction(Fr, &p, &[En, Py], false).unwrap(), Route::Expert(En));
        assert_eq!(route_prediction(Fr, &p, &[], true).unwrap(), Route::Common);
        assert!(matches!(route_prediction(Fr, &p, &[], false), Err(Error::NothingRoutable)));
    }

    #[test]
    fn json_round_trip() {
        let docs = vec![
            Document::new("the cat sat", En),
            Document::new("the dog sat", En),
            Document::new("le chat est", Fr),
            Document::new("le chien est", Fr),
        ];
        let r = Router::train(&docs, &ClassifierConfig::default(), 0).unwrap();
        let back = Router::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.predict("le chat").0, Fr);
    }
}
