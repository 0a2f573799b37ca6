//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for backpropagation. Leaf gradients
//! persist across [`Tape::backward`] calls and accumulate; interior node
//! gradients are rebuilt on every call.

use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Head layout shared by the two attention ops. Both `q`/`k`/`v` and the
/// mixed output are `[batch·seq × heads·head_dim]`; scores are
/// `[batch·heads·seq × seq]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnGeom {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttnGeom {
    fn width(&self) -> usize {
        self.heads * self.head_dim
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Scale { x: Var, factor: F },
    Mix { a: Var, b: Var, alpha: F },
    Sum { x: Var },
    Embedding { table: Var, ids: Vec<usize> },
    Softmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, rstd: Vec<F> },
    Gelu { x: Var },
    SliceCols { x: Var, start: usize },
    AttnScores { q: Var, k: Var, geom: AttnGeom },
    AttnMix { probs: Var, v: Var, geom: AttnGeom },
    /// Loss whose gradient w.r.t. `x` is `local` times the upstream scalar.
    Loss { x: Var, local: Vec<F> },
}

struct Node<F> {
    shape: Vec<usize>,
    value: Vec<F>,
    requires_grad: bool,
    op: Op<F>,
}

pub struct Tape<F: Float = f32> {
    nodes: Vec<Node<F>>,
    leaf_grads: Vec<Option<Vec<F>>>,
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Total-loss mixing `alpha·a + (1−alpha)·b`, shared by the tape op and by
/// anything that audits logged losses.
pub fn mix<F: Float>(a: F, b: F, alpha: F) -> F {
    alpha * a + (F::one() - alpha) * b
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<F>, requires_grad: bool, op: Op<F>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<F> {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = &self.node(v).shape;
        if s.len() != 2 {
            return Err(Error::shape(op, format!("expected a matrix, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    /// Copies a tensor onto the tape; gradients flow to it iff the tensor
    /// requires them.
    pub fn leaf(&mut self, t: &Tensor<F>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<F>) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), data)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape nodes are well formed")
    }

    /// Gradient accumulated into a leaf by previous backward passes.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.leaf_grads[v.0].as_deref()
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let op = if trans_b { "matmul_t" } else { "matmul" };
        let (m, k) = self.matrix(a, op)?;
        let (br, bc) = self.matrix(b, op)?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::shape(
                op,
                format!("{:?} x {:?}", self.node(a).shape, self.node(b).shape),
            ));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(m, k, n, self.value(a), false, self.value(b), trans_b, &mut out, false);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, rg, Op::MatMul { a, b, trans_b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.node(a).shape != self.node(b).shape {
            return Err(Error::shape(
                "add",
                format!("{:?} + {:?}", self.node(a).shape, self.node(b).shape),
            ));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| *x + *y)
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.node(a).shape.clone(), out, rg, Op::Add { a, b }))
    }

    /// Adds a length-`d` vector to every row of an `[n×d]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, d) = self.matrix(x, "add_bias")?;
        if self.node(bias).value.len() != d {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + {:?}", self.node(x).shape, self.node(bias).shape),
            ));
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| *x + *y))
            .collect();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(self.node(x).shape.clone(), out, rg, Op::AddBias { x, bias }))
    }

    pub fn scale(&mut self, x: Var, factor: F) -> Var {
        let out = self.value(x).iter().map(|v| *v * factor).collect();
        let rg = self.rg(&[x]);
        self.push(self.node(x).shape.clone(), out, rg, Op::Scale { x, factor })
    }

    /// `alpha·a + (1−alpha)·b` for same-shape inputs.
    pub fn mix(&mut self, a: Var, b: Var, alpha: F) -> Result<Var> {
        if self.node(a).shape != self.node(b).shape {
            return Err(Error::shape(
                "mix",
                format!("{:?} vs {:?}", self.node(a).shape, self.node(b).shape),
            ));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| mix(*x, *y, alpha))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.node(a).shape.clone(), out, rg, Op::Mix { a, b, alpha }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], rg, Op::Sum { x })
    }

    /// Gathers rows of `table[v×d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.matrix(table, "embedding")?;
        if ids.is_empty() {
            return Err(Error::shape("embedding", "no ids"));
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape(
                "embedding",
                format!("id {bad} outside table {:?}", self.node(table).shape),
            ));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![ids.len(), d],
            out,
            rg,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let d = *self.node(x).shape.last().expect("non-empty shape");
        let mut out = self.value(x).to_vec();
        out.chunks_exact_mut(d).for_each(softmax_in_place);
        let rg = self.rg(&[x]);
        self.push(self.node(x).shape.clone(), out, rg, Op::Softmax { x })
    }

    /// Row-wise layer normalization followed by the affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, d) = self.matrix(x, "layer_norm")?;
        if self.node(gamma).value.len() != d || self.node(beta).value.len() != d {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "{:?} with gamma {:?} beta {:?}",
                    self.node(x).shape,
                    self.node(gamma).shape,
                    self.node(beta).shape
                ),
            ));
        }
        let eps = F::from_f64_lossy(LN_EPS);
        let inv_d = F::one() / F::from_usize(d).unwrap();
        let xs = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = vec![F::zero(); n * d];
        let mut rstd = vec![F::zero(); n];
        let mut out = vec![F::zero(); n * d];
        for r in 0..n {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() * inv_d;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<F>() * inv_d;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = h * g[c] + b[c];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            vec![n, d],
            out,
            rg,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| gelu(*v)).collect();
        let rg = self.rg(&[x]);
        self.push(self.node(x).shape.clone(), out, rg, Op::Gelu { x })
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.matrix(x, "slice_cols")?;
        if len == 0 || start + len > d {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{} of {:?}", start + len, self.node(x).shape),
            ));
        }
        let out = self
            .value(x)
            .chunks_exact(d)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![n, len], out, rg, Op::SliceCols { x, start }))
    }

    /// Scaled dot-product scores `q·kᵀ/√head_dim` per head with the causal
    /// mask applied (future positions are `-inf`).
    pub fn causal_attention_scores(&mut self, q: Var, k: Var, geom: AttnGeom) -> Result<Var> {
        let rows = geom.batch * geom.seq;
        for v in [q, k] {
            if self.node(v).shape != [rows, geom.width()] {
                return Err(Error::shape(
                    "causal_attention_scores",
                    format!("{:?} for geometry {geom:?}", self.node(v).shape),
                ));
            }
        }
        let AttnGeom {
            batch,
            seq,
            heads,
            head_dim,
        } = geom;
        let w = geom.width();
        let scale = F::one() / F::from_usize(head_dim).unwrap().sqrt();
        let qs = self.value(q);
        let ks = self.value(k);
        let mut out = vec![F::neg_infinity(); batch * heads * seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..seq {
                    let qi = &qs[(b * seq + i) * w + h * head_dim..][..head_dim];
                    let orow = ((b * heads + h) * seq + i) * seq;
                    for j in 0..=i {
                        let kj = &ks[(b * seq + j) * w + h * head_dim..][..head_dim];
                        out[orow + j] = dot(qi, kj) * scale;
                    }
                }
            }
        }
        let rg = self.rg(&[q, k]);
        Ok(self.push(
            vec![batch * heads * seq, seq],
            out,
            rg,
            Op::AttnScores { q, k, geom },
        ))
    }

    /// Mixes values with attention probabilities back into `[batch·seq × width]`.
    pub fn attention_mix(&mut self, probs: Var, v: Var, geom: AttnGeom) -> Result<Var> {
        let AttnGeom {
            batch,
            seq,
            heads,
            head_dim,
        } = geom;
        let w = geom.width();
        if self.node(probs).shape != [batch * heads * seq, seq]
            || self.node(v).shape != [batch * seq, w]
        {
            return Err(Error::shape(
                "attention_mix",
                format!(
                    "probs {:?} values {:?} for geometry {geom:?}",
                    self.node(probs).shape,
                    self.node(v).shape
                ),
            ));
        }
        let ps = self.value(probs);
        let vs = self.value(v);
        let mut out = vec![F::zero(); batch * seq * w];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..seq {
                    let prow = &ps[((b * heads + h) * seq + i) * seq..][..seq];
                    let o = &mut out[(b * seq + i) * w + h * head_dim..][..head_dim];
                    for (j, &p) in prow.iter().enumerate().take(i + 1) {
                        let vj = &vs[(b * seq + j) * w + h * head_dim..][..head_dim];
                        o.iter_mut().zip(vj).for_each(|(o, v)| *o = *o + p * *v);
                    }
                }
            }
        }
        let rg = self.rg(&[probs, v]);
        Ok(self.push(vec![batch * seq, w], out, rg, Op::AttnMix { probs, v, geom }))
    }

    /// Mean next-token cross-entropy (natural log) over rows whose target is
    /// not `ignore_index`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_index: usize) -> Result<Var> {
        let (n, v) = self.matrix(logits, "cross_entropy")?;
        if targets.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for logits {:?}", targets.len(), self.node(logits).shape),
            ));
        }
        if let Some(bad) = targets.iter().find(|&&t| t != ignore_index && t >= v) {
            return Err(Error::shape(
                "cross_entropy",
                format!("target {bad} outside vocabulary {v}"),
            ));
        }
        let count = targets.iter().filter(|&&t| t != ignore_index).count();
        if count == 0 {
            return Err(Error::AllMasked);
        }
        let inv = F::one() / F::from_usize(count).unwrap();
        let xs = self.value(logits);
        let mut local = vec![F::zero(); n * v];
        let mut total = F::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t == ignore_index {
                continue;
            }
            let row = &xs[r * v..(r + 1) * v];
            let lse = log_sum_exp(row);
            total = total + (lse - row[t]);
            let g = &mut local[r * v..(r + 1) * v];
            for (g, x) in g.iter_mut().zip(row) {
                *g = (*x - lse).exp() * inv;
            }
            g[t] = g[t] - inv;
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(vec![1], vec![total * inv], rg, Op::Loss { x: logits, local }))
    }

    /// Mean over unmasked rows of `KL(q‖p)` where `q = softmax(student)` and
    /// `p = softmax(teacher)`. The teacher side is a constant.
    pub fn reverse_kl(&mut self, student: Var, teacher: &[F], mask: &[bool]) -> Result<Var> {
        let (n, v) = self.matrix(student, "reverse_kl")?;
        if teacher.len() != n * v || mask.len() != n {
            return Err(Error::shape(
                "reverse_kl",
                format!(
                    "student {:?}, teacher {} values, mask {}",
                    self.node(student).shape,
                    teacher.len(),
                    mask.len()
                ),
            ));
        }
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(Error::AllMasked);
        }
        let inv = F::one() / F::from_usize(count).unwrap();
        let xs = self.value(student);
        let mut local = vec![F::zero(); n * v];
        let mut total = F::zero();
        let mut diff = vec![F::zero(); v];
        for r in (0..n).filter(|&r| mask[r]) {
            let s = &xs[r * v..(r + 1) * v];
            let t = &teacher[r * v..(r + 1) * v];
            let ls = log_sum_exp(s);
            let lt = log_sum_exp(t);
            let mut kl = F::zero();
            for c in 0..v {
                let log_q = s[c] - ls;
                let log_p = t[c] - lt;
                diff[c] = log_q - log_p;
                kl = kl + log_q.exp() * diff[c];
            }
            total = total + kl;
            let g = &mut local[r * v..(r + 1) * v];
            for c in 0..v {
                g[c] = (s[c] - ls).exp() * (diff[c] - kl) * inv;
            }
        }
        let rg = self.rg(&[student]);
        Ok(self.push(vec![1], vec![total * inv], rg, Op::Loss { x: student, local }))
    }

    /// Backpropagates from a scalar, adding into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = &self.node(loss).shape;
        if self.node(loss).value.len() != 1 {
            return Err(Error::NonScalarLoss(shape.clone()));
        }
        if !self.node(loss).requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a = *a + *d),
                    None => self.leaf_grads[i] = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => unreachable!("leaves are handled by the caller"),
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = node.shape[1];
                if self.nodes[a.0].requires_grad {
                    // dA = dC · Bᵀ   (B stored k×n, or n×k when transposed)
                    let da = slot(grads, *a, m * k);
                    F::gemm(m, n, k, g, false, &self.nodes[b.0].value, !trans_b, da, true);
                }
                if self.nodes[b.0].requires_grad {
                    let bv = slot(grads, *b, k * n);
                    if *trans_b {
                        // B is n×k: dB = dCᵀ · A
                        F::gemm(n, m, k, g, true, &self.nodes[a.0].value, false, bv, true);
                    } else {
                        // dB = Aᵀ · dC
                        F::gemm(k, m, n, &self.nodes[a.0].value, true, g, false, bv, true);
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if self.nodes[v.0].requires_grad {
                        add_into(slot(grads, *v, g.len()), g);
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if self.nodes[x.0].requires_grad {
                    add_into(slot(grads, *x, g.len()), g);
                }
                if self.nodes[bias.0].requires_grad {
                    let d = self.nodes[bias.0].value.len();
                    let gb = slot(grads, *bias, d);
                    for row in g.chunks_exact(d) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Scale { x, factor } => {
                if self.nodes[x.0].requires_grad {
                    let gx = slot(grads, *x, g.len());
                    gx.iter_mut().zip(g).for_each(|(a, d)| *a = *a + *d * *factor);
                }
            }
            Op::Mix { a, b, alpha } => {
                for (v, w) in [(a, *alpha), (b, F::one() - *alpha)] {
                    if self.nodes[v.0].requires_grad {
                        let gv = slot(grads, *v, g.len());
                        gv.iter_mut().zip(g).for_each(|(a, d)| *a = *a + *d * w);
                    }
                }
            }
            Op::Sum { x } => {
                if self.nodes[x.0].requires_grad {
                    let n = self.nodes[x.0].value.len();
                    slot(grads, *x, n).iter_mut().for_each(|a| *a = *a + g[0]);
                }
            }
            Op::Embedding { table, ids } => {
                if self.nodes[table.0].requires_grad {
                    let d = node.shape[1];
                    let n = self.nodes[table.0].value.len();
                    let gt = slot(grads, *table, n);
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::Softmax { x } => {
                if self.nodes[x.0].requires_grad {
                    let d = *node.shape.last().unwrap();
                    let gx = slot(grads, *x, g.len());
                    for ((gx, y), gy) in gx
                        .chunks_exact_mut(d)
                        .zip(node.value.chunks_exact(d))
                        .zip(g.chunks_exact(d))
                    {
                        let s = dot(y, gy);
                        for c in 0..d {
                            gx[c] = gx[c] + y[c] * (gy[c] - s);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = node.shape[1];
                let gam = &self.nodes[gamma.0].value;
                if self.nodes[gamma.0].requires_grad {
                    let gg = slot(grads, *gamma, d);
                    for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for c in 0..d {
                            gg[c] = gg[c] + gr[c] * hr[c];
                        }
                    }
                }
                if self.nodes[beta.0].requires_grad {
                    let gb = slot(grads, *beta, d);
                    for gr in g.chunks_exact(d) {
                        add_into(gb, gr);
                    }
                }
                if self.nodes[x.0].requires_grad {
                    let inv_d = F::one() / F::from_usize(d).unwrap();
                    let gx = slot(grads, *x, g.len());
                    let mut dh = vec![F::zero(); d];
                    for r in 0..rstd.len() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        for c in 0..d {
                            dh[c] = gr[c] * gam[c];
                        }
                        let mean_dh = dh.iter().copied().sum::<F>() * inv_d;
                        let mean_dh_h = dot(&dh, hr) * inv_d;
                        let out = &mut gx[r * d..(r + 1) * d];
                        for c in 0..d {
                            out[c] = out[c] + rstd[r] * (dh[c] - mean_dh - hr[c] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                if self.nodes[x.0].requires_grad {
                    let xs = &self.nodes[x.0].value;
                    let gx = slot(grads, *x, g.len());
                    for ((a, d), v) in gx.iter_mut().zip(g).zip(xs) {
                        *a = *a + *d * gelu_grad(*v);
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if self.nodes[x.0].requires_grad {
                    let d = self.nodes[x.0].shape[1];
                    let len = node.shape[1];
                    let gx = slot(grads, *x, self.nodes[x.0].value.len());
                    for (gr, src) in gx.chunks_exact_mut(d).zip(g.chunks_exact(len)) {
                        add_into(&mut gr[*start..start + len], src);
                    }
                }
            }
            Op::AttnScores { q, k, geom } => {
                let AttnGeom {
                    batch,
                    seq,
                    heads,
                    head_dim,
                } = *geom;
                let w = geom.width();
                let scale = F::one() / F::from_usize(head_dim).unwrap().sqrt();
                let (need_q, need_k) =
                    (self.nodes[q.0].requires_grad, self.nodes[k.0].requires_grad);
                let qs = &self.nodes[q.0].value;
                let ks = &self.nodes[k.0].value;
                let mut gq = need_q.then(|| vec![F::zero(); qs.len()]);
                let mut gk = need_k.then(|| vec![F::zero(); ks.len()]);
                for b in 0..batch {
                    for h in 0..heads {
                        for i in 0..seq {
                            let grow = &g[((b * heads + h) * seq + i) * seq..][..seq];
                            let qo = (b * seq + i) * w + h * head_dim;
                            for (j, &gs) in grow.iter().enumerate().take(i + 1) {
                                let gs = gs * scale;
                                let ko = (b * seq + j) * w + h * head_dim;
                                if let Some(gq) = gq.as_mut() {
                                    axpy(&mut gq[qo..qo + head_dim], gs, &ks[ko..ko + head_dim]);
                                }
                                if let Some(gk) = gk.as_mut() {
                                    axpy(&mut gk[ko..ko + head_dim], gs, &qs[qo..qo + head_dim]);
                                }
                            }
                        }
                    }
                }
                if let Some(gq) = gq {
                    add_into(slot(grads, *q, gq.len()), &gq);
                }
                if let Some(gk) = gk {
                    add_into(slot(grads, *k, gk.len()), &gk);
                }
            }
            Op::AttnMix { probs, v, geom } => {
                let AttnGeom {
                    batch,
                    seq,
                    heads,
                    head_dim,
                } = *geom;
                let w = geom.width();
                let ps = &self.nodes[probs.0].value;
                let vs = &self.nodes[v.0].value;
                let mut gp = self.nodes[probs.0]
                    .requires_grad
                    .then(|| vec![F::zero(); ps.len()]);
                let mut gv = self.nodes[v.0]
                    .requires_grad
                    .then(|| vec![F::zero(); vs.len()]);
                for b in 0..batch {
                    for h in 0..heads {
                        for i in 0..seq {
                            let prow = ((b * heads + h) * seq + i) * seq;
                            let go = &g[(b * seq + i) * w + h * head_dim..][..head_dim];
                            for j in 0..=i {
                                let vo = (b * seq + j) * w + h * head_dim;
                                if let Some(gp) = gp.as_mut() {
                                    gp[prow + j] = gp[prow + j] + dot(go, &vs[vo..vo + head_dim]);
                                }
                                if let Some(gv) = gv.as_mut() {
                                    axpy(&mut gv[vo..vo + head_dim], ps[prow + j], go);
                                }
                            }
                        }
                    }
                }
                if let Some(gp) = gp {
                    add_into(slot(grads, *probs, gp.len()), &gp);
                }
                if let Some(gv) = gv {
                    add_into(slot(grads, *v, gv.len()), &gv);
                }
            }
            Op::Loss { x, local } => {
                if self.nodes[x.0].requires_grad {
                    let gx = slot(grads, *x, local.len());
                    gx.iter_mut().zip(local).for_each(|(a, l)| *a = *a + *l * g[0]);
                }
            }
        }
    }
}

fn slot<F: Float>(grads: &mut [Option<Vec<F>>], v: Var, len: usize) -> &mut [F] {
    grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
}

fn add_into<F: Float>(dst: &mut [F], src: &[F]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a = *a + *b);
}

fn axpy<F: Float>(dst: &mut [F], a: F, x: &[F]) {
    dst.iter_mut().zip(x).for_each(|(d, x)| *d = *d + a * *x);
}

pub(crate) fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (x, y)| acc + *x * *y)
}

pub(crate) fn log_sum_exp<F: Float>(row: &[F]) -> F {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    let s: F = row.iter().map(|v| (*v - m).exp()).sum();
    m + s.ln()
}

pub(crate) fn softmax_in_place<F: Float>(row: &mut [F]) {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut s = F::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s = s + *v;
    }
    let inv = F::one() / s;
    row.iter_mut().for_each(|v| *v = *v * inv);
}

fn gelu<F: Float>(x: F) -> F {
    let c = F::from_f64_lossy(GELU_C);
    let a = F::from_f64_lossy(GELU_A);
    let half = F::from_f64_lossy(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<F: Float>(x: F) -> F {
    let c = F::from_f64_lossy(GELU_C);
    let a = F::from_f64_lossy(GELU_A);
    let half = F::from_f64_lossy(0.5);
    let three = F::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + three * a * x * x)
}
