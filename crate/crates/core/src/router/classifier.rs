use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tfidf::SparseVec;
use crate::corpus::Lang;
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainer {
    /// Full-batch gradient descent.
    LogregBatch,
    /// Per-sample stochastic gradient descent in seed-shuffled order.
    LogregSgd,
}

impl FromStr for Trainer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "logreg_batch" => Ok(Trainer::LogregBatch),
            "logreg_sgd" => Ok(Trainer::LogregSgd),
            other => Err(format!("unknown trainer '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub trainer: Trainer,
    pub reg_lambda: f64,
    pub epochs: usize,
    /// Initial SGD step size; full-batch descent uses `1/(1+λ)`.
    pub sgd_lr: f64,
    /// Gradient-norm tolerance that stops full-batch descent early.
    pub tolerance: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            trainer: Trainer::LogregBatch,
            reg_lambda: 1e-4,
            epochs: 200,
            sgd_lr: 0.5,
            tolerance: 1e-6,
        }
    }
}

/// Multinomial logistic regression over the four classes in [`Lang::ALL`]
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    /// `CLASSES` rows of `features` weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub trainer: Trainer,
}

fn softmax4(mut z: [f64; CLASSES]) -> [f64; CLASSES] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
    z
}

impl LinearClassifier {
    pub fn zeros(features: usize, trainer: Trainer) -> Self {
        LinearClassifier {
            weights: vec![vec![0.0; features]; CLASSES],
            bias: vec![0.0; CLASSES],
            trainer,
        }
    }

    pub fn num_features(&self) -> usize {
        self.weights[0].len()
    }

    pub fn scores(&self, x: &SparseVec) -> [f64; CLASSES] {
        let mut z = [0.0; CLASSES];
        for (c, zc) in z.iter_mut().enumerate() {
            *zc = self.bias[c] + x.iter().map(|&(i, v)| self.weights[c][i] * v).sum::<f64>();
        }
        z
    }

    pub fn probabilities(&self, x: &SparseVec) -> [f64; CLASSES] {
        softmax4(self.scores(x))
    }

    /// Most probable class; ties go to the earlier class.
    pub fn predict(&self, x: &SparseVec) -> (Lang, [f64; CLASSES]) {
        let p = self.probabilities(x);
        let mut best = 0;
        for c in 1..CLASSES {
            if p[c] > p[best] {
                best = c;
            }
        }
        (Lang::ALL[best], p)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flatten().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Mean cross-entropy plus `λ/2·‖W‖²` (bias unregularized).
pub fn objective(clf: &LinearClassifier, xs: &[SparseVec], ys: &[Lang], lambda: f64) -> f64 {
    let mut loss = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let z = clf.scores(x);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - z[y.index()];
    }
    let reg: f64 = clf.weights.iter().flatten().map(|w| w * w).sum();
    loss / xs.len() as f64 + 0.5 * lambda * reg
}

/// Gradient of [`objective`] as a classifier-shaped buffer.
pub fn gradient(clf: &LinearClassifier, xs: &[SparseVec], ys: &[Lang], lambda: f64) -> LinearClassifier {
    let mut g = LinearClassifier::zeros(clf.num_features(), clf.trainer);
    let inv = 1.0 / xs.len() as f64;
    for (x, y) in xs.iter().zip(ys) {
        let mut d = clf.probabilities(x);
        d[y.index()] -= 1.0;
        for c in 0..CLASSES {
            let dc = d[c] * inv;
            g.bias[c] += dc;
            for &(i, v) in x {
                g.weights[c][i] += dc * v;
            }
        }
    }
    for (gr, wr) in g.weights.iter_mut().zip(&clf.weights) {
        gr.iter_mut().zip(wr).for_each(|(g, w)| *g += lambda * w);
    }
    g
}

fn grad_norm(g: &LinearClassifier) -> f64 {
    g.weights.iter().flatten().chain(&g.bias).map(|v| v * v).sum::<f64>().sqrt()
}

pub fn train_classifier(
    xs: &[SparseVec],
    ys: &[Lang],
    features: usize,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<LinearClassifier> {
    if xs.len() != ys.len() {
        return Err(Error::shape("train_classifier", format!("{} vectors, {} labels", xs.len(), ys.len())));
    }
    let mut present = [false; CLASSES];
    ys.iter().for_each(|y| present[y.index()] = true);
    let n_present = present.iter().filter(|p| **p).count();
    if n_present < 2 {
        return Err(Error::SingleClass(n_present));
    }
    let mut clf = LinearClassifier::zeros(features, cfg.trainer);
    match cfg.trainer {
        Trainer::LogregBatch => {
            // Softmax curvature is at most 1/2 per unit-norm feature row plus
            // the bias column, so 1/(1+λ) is a safe step.
            let lr = 1.0 / (1.0 + cfg.reg_lambda);
            for _ in 0..cfg.epochs {
                let g = gradient(&clf, xs, ys, cfg.reg_lambda);
                if grad_norm(&g) < cfg.tolerance {
                    break;
                }
                for c in 0..CLASSES {
                    clf.bias[c] -= lr * g.bias[c];
                    clf.weights[c].iter_mut().zip(&g.weights[c]).for_each(|(w, g)| *w -= lr * g);
                }
            }
        }
        Trainer::LogregSgd => {
            let mut rng = Rng::new(seed);
            let mut order: Vec<usize> = (0..xs.len()).collect();
            let mut t = 0usize;
            // Weight decay goes into a global scale (true weights are
            // `scale · weights`) so each update only touches the sample's
            // non-zero features.
            let mut scale = 1.0;
            for _ in 0..cfg.epochs {
                rng.shuffle(&mut order);
                for &k in &order {
                    let lr = cfg.sgd_lr / (1.0 + cfg.sgd_lr * cfg.reg_lambda * t as f64);
                    t += 1;
                    let x = &xs[k];
                    let mut z = [0.0; CLASSES];
                    for (c, zc) in z.iter_mut().enumerate() {
                        *zc = clf.bias[c] + scale * x.iter().map(|&(i, v)| clf.weights[c][i] * v).sum::<f64>();
                    }
                    let mut d = softmax4(z);
                    d[ys[k].index()] -= 1.0;
                    scale *= 1.0 - lr * cfg.reg_lambda;
                    for c in 0..CLASSES {
                        clf.bias[c] -= lr * d[c];
                        for &(i, v) in x {
                            clf.weights[c][i] -= lr * d[c] * v / scale;
                        }
                    }
                    if scale < 1e-6 {
                        clf.weights.iter_mut().flatten().for_each(|w| *w *= scale);
                        scale = 1.0;
                    }
                }
            }
            clf.weights.iter_mut().flatten().for_each(|w| *w *= scale);
        }
    }
    if !clf.is_finite() {
        return Err(Error::NonFiniteGradient("router weights".into()));
    }
    Ok(clf)
}
