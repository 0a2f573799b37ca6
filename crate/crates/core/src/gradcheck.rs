//! Central finite-difference checks for every differentiable operation, in
//! `f64`.

use crate::corpus::Lang;
use crate::error::Result;
use crate::model::{lm_loss, ModelConfig, TransformerLM};
use crate::numerics::{AttnGeom, Rng, Tape, Tensor, Var, IGNORE_INDEX};
use crate::router::{gradient, objective, LinearClassifier, Trainer, CLASSES};

/// Finite-difference step.
pub const H: f64 = 1e-4;
/// Largest accepted relative error.
pub const TOL: f64 = 1e-4;

/// Worst relative error of one operation over its random instances.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub instances: u64,
    pub worst: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.worst < TOL
    }
}

fn rand_tensor(shape: &[usize], rng: &mut Rng, scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.normal(scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data").with_grad()
}

/// Reduces a matrix to a scalar through a fixed random projection and a
/// cross-entropy, so every output element carries a distinct weight.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let (rows, cols) = match shape.as_slice() {
        [r, c] => (*r, *c),
        _ => (1, shape.iter().product()),
    };
    let mut rng = Rng::new(seed ^ 0xabcdef);
    let r: Vec<f64> = (0..cols * 3).map(|_| rng.normal(1.0)).collect();
    let r = tape.constant(&[cols, 3], r)?;
    let z = tape.matmul(y, r)?;
    let targets: Vec<usize> = (0..rows).map(|_| rng.below(3)).collect();
    tape.cross_entropy(z, &targets, usize::MAX)
}

fn eval(inputs: &[Tensor<f64>], f: &impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &vars)?;
    Ok(tape.value(loss)[0])
}

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, or the plain difference norm when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale: f64 =
        analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative error between the tape gradient and a central difference
/// over the inputs that require gradients.
pub fn check(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        if !input.requires_grad() {
            continue;
        }
        let analytic = tape
            .grad(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut numeric = vec![0.0; input.numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            *slot = (eval(&plus, &f)? - eval(&minus, &f)?) / (2.0 * H);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

struct Suite {
    instances: u64,
    results: Vec<OpCheck>,
}

impl Suite {
    fn record(&mut self, op: &'static str, err: f64) {
        match self.results.iter_mut().find(|r| r.op == op) {
            Some(r) => {
                r.worst = r.worst.max(err);
                r.instances += 1;
            }
            None => self.results.push(OpCheck {
                op,
                instances: 1,
                worst: err,
            }),
        }
    }

    fn run(&mut self, op: &'static str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> Result<()> {
        let err = check(&inputs, f)?;
        self.record(op, err);
        Ok(())
    }
}

fn tape_ops(s: &mut Suite, seed: u64) -> Result<()> {
    let mut rng = Rng::new(seed);
    let (m, k, n) = (1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4));
    let a = rand_tensor(&[m, k], &mut rng, 1.0);
    let b = rand_tensor(&[k, n], &mut rng, 1.0);
    let bt = rand_tensor(&[n, k], &mut rng, 1.0);
    s.run("matmul", vec![a.clone(), b], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, seed)
    })?;
    s.run("matmul_t", vec![a, bt], |t, v| {
        let y = t.matmul_t(v[0], v[1])?;
        project(t, y, seed)
    })?;

    let (r, c) = (1 + rng.below(4), 2 + rng.below(5));
    let a = rand_tensor(&[r, c], &mut rng, 1.0);
    let b = rand_tensor(&[r, c], &mut rng, 1.0);
    let bias = rand_tensor(&[c], &mut rng, 1.0);
    let gain = rand_tensor(&[c], &mut rng, 1.0);
    let alpha = rng.uniform();
    s.run("add", vec![a.clone(), b.clone()], |t, v| {
        let y = t.add(v[0], v[1])?;
        project(t, y, seed)
    })?;
    s.run("add_bias", vec![a.clone(), bias.clone()], |t, v| {
        let y = t.add_bias(v[0], v[1])?;
        project(t, y, seed)
    })?;
    s.run("scale", vec![a.clone()], |t, v| {
        let y = t.scale(v[0], -1.7);
        project(t, y, seed)
    })?;
    s.run("mix", vec![a.clone(), b], |t, v| {
        let y = t.mix(v[0], v[1], alpha)?;
        project(t, y, seed)
    })?;
    s.run("sum", vec![a.clone()], |t, v| {
        let y = t.gelu(v[0]);
        Ok(t.sum(y))
    })?;
    let wide = Tensor::new(a.shape().to_vec(), a.data().iter().map(|x| 3.0 * x).collect())?.with_grad();
    s.run("gelu", vec![wide], |t, v| {
        let y = t.gelu(v[0]);
        project(t, y, seed)
    })?;
    s.run("softmax", vec![a.clone()], |t, v| {
        let y = t.softmax(v[0]);
        project(t, y, seed)
    })?;
    s.run("layer_norm", vec![a.clone(), gain, bias], |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2])?;
        project(t, y, seed)
    })?;

    let (vocab, d) = (2 + rng.below(5), 1 + rng.below(4));
    let ids: Vec<usize> = (0..1 + rng.below(6)).map(|_| rng.below(vocab)).collect();
    let table = rand_tensor(&[vocab, d + 2], &mut rng, 1.0);
    let start = rng.below(3);
    s.run("embedding", vec![table.clone()], |t, v| {
        let y = t.embedding(v[0], &ids)?;
        project(t, y, seed)
    })?;
    s.run("slice_cols", vec![table], |t, v| {
        let y = t.slice_cols(v[0], start, d)?;
        project(t, y, seed)
    })?;

    let geom = AttnGeom {
        batch: 1 + rng.below(2),
        seq: 1 + rng.below(4),
        heads: 1 + rng.below(2),
        head_dim: 1 + rng.below(3),
    };
    let shape = [geom.batch * geom.seq, geom.heads * geom.head_dim];
    let q = rand_tensor(&shape, &mut rng, 1.0);
    let k = rand_tensor(&shape, &mut rng, 1.0);
    let v = rand_tensor(&shape, &mut rng, 1.0);
    let p = rand_tensor(&[geom.batch * geom.heads * geom.seq, geom.seq], &mut rng, 1.0);
    s.run("causal_attention_scores", vec![q.clone(), k.clone()], |t, vs| {
        let sc = t.causal_attention_scores(vs[0], vs[1], geom)?;
        let p = t.softmax(sc);
        project(t, p, seed)
    })?;
    s.run("attention_mix", vec![p, v.clone()], |t, vs| {
        let y = t.attention_mix(vs[0], vs[1], geom)?;
        project(t, y, seed)
    })?;
    s.run("attention_block", vec![q, k, v], |t, vs| {
        let sc = t.causal_attention_scores(vs[0], vs[1], geom)?;
        let p = t.softmax(sc);
        let y = t.attention_mix(p, vs[2], geom)?;
        project(t, y, seed)
    })?;

    let (n, v) = (2 + rng.below(4), 2 + rng.below(6));
    let logits = rand_tensor(&[n, v], &mut rng, 2.0);
    let mut targets: Vec<usize> = (0..n).map(|_| rng.below(v)).collect();
    targets[0] = IGNORE_INDEX;
    s.run("cross_entropy", vec![logits.clone()], |t, vs| t.cross_entropy(vs[0], &targets, IGNORE_INDEX))?;

    let teacher: Vec<f64> = (0..n * v).map(|_| rng.normal(2.0)).collect();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.7).collect();
    mask[0] = true;
    s.run("rkl_loss", vec![logits], |t, vs| crate::distill::rkl_loss(t, vs[0], &teacher, &mask))?;
    Ok(())
}

fn whole_model(s: &mut Suite, seed: u64) -> Result<()> {
    let mut rng = Rng::new(700 + seed);
    let config = ModelConfig {
        n_layers: 1 + rng.below(2),
        n_heads: 2,
        d_model: 4,
        d_ff: 6,
        context_len: 4,
        vocab_size: 5,
        tie_embeddings: seed % 2 == 0,
    };
    let mut model = TransformerLM::<f64>::new(config, true, &mut rng)?;
    // Larger weights than the default init so every path carries signal.
    for p in model.params.iter_mut() {
        p.tensor.data_mut().iter_mut().for_each(|v| *v += rng.normal(0.3));
    }
    let tokens: Vec<u32> = (0..8).map(|_| rng.below(5) as u32).collect();
    let inputs: Vec<_> = model.params.iter().map(|p| p.tensor.clone()).collect();
    s.run("transformer_lm_loss", inputs, |t, vars| {
        let logits = model.forward(t, vars, None, &tokens, 2, 4)?;
        lm_loss(t, logits, &tokens, &[true; 8], 2, 4)
    })
}

/// The L2-regularized multinomial logistic objective of the router, whose
/// gradient is computed in closed form rather than on the tape.
fn router_objective(s: &mut Suite, seed: u64) {
    let mut rng = Rng::new(800 + seed);
    let features = 2 + rng.below(4);
    let n = 3 + rng.below(5);
    let mut xs: Vec<Vec<(usize, f64)>> = Vec::new();
    for _ in 0..n {
        let mut x = Vec::new();
        for i in 0..features {
            if rng.uniform() < 0.7 {
                x.push((i, rng.normal(1.0)));
            }
        }
        xs.push(x);
    }
    let ys: Vec<Lang> = (0..n).map(|_| Lang::ALL[rng.below(CLASSES)]).collect();
    let mut clf = LinearClassifier::zeros(features, Trainer::LogregBatch);
    clf.weights.iter_mut().flatten().chain(clf.bias.iter_mut()).for_each(|w| *w = rng.normal(1.0));
    let lambda = 0.1 + rng.uniform();
    let g = gradient(&clf, &xs, &ys, lambda);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for c in 0..CLASSES {
        for i in 0..=features {
            let mut plus = clf.clone();
            let mut minus = clf.clone();
            let (a, p, m) = if i == features {
                (g.bias[c], &mut plus.bias[c], &mut minus.bias[c])
            } else {
                (g.weights[c][i], &mut plus.weights[c][i], &mut minus.weights[c][i])
            };
            *p += H;
            *m -= H;
            analytic.push(a);
            numeric.push((objective(&plus, &xs, &ys, lambda) - objective(&minus, &xs, &ys, lambda)) / (2.0 * H));
        }
    }
    s.record("router_objective", relative_error(&analytic, &numeric));
}

/// Runs every check on `instances` random instances each.
pub fn suite(instances: u64) -> Result<Vec<OpCheck>> {
    let mut s = Suite {
        instances,
        results: Vec::new(),
    };
    for seed in 0..s.instances {
        tape_ops(&mut s, seed)?;
        whole_model(&mut s, seed)?;
        router_objective(&mut s, seed);
    }
    Ok(s.results)
}
