//! AdamW with decoupled weight decay, global-norm gradient clipping and a
//! warmup/cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::{Float, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub max_grad_norm: f64,
    pub warmup_steps: usize,
    /// Final learning rate as a fraction of `lr` at the end of the cosine.
    pub min_lr_ratio: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.1,
            max_grad_norm: 1.0,
            warmup_steps: 0,
            min_lr_ratio: 0.1,
        }
    }
}

impl AdamWConfig {
    /// Learning rate at `step` of `total`: linear warmup, then cosine decay
    /// down to `min_lr_ratio · lr`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps.min(step)) as f64 / span as f64).min(1.0);
        let floor = self.lr * self.min_lr_ratio;
        floor + (self.lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// One AdamW update of a single parameter buffer at (1-based) step `t`.
#[allow(clippy::too_many_arguments)]
pub fn adamw_step<F: Float>(
    param: &mut [F],
    grad: &[F],
    m: &mut [F],
    v: &mut [F],
    t: u64,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
    weight_decay: f64,
) {
    let (b1, b2) = betas;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let decay = F::from_f64_lossy(1.0 - lr * weight_decay);
    let (fb1, fb2) = (F::from_f64_lossy(b1), F::from_f64_lossy(b2));
    let (one_b1, one_b2) = (F::from_f64_lossy(1.0 - b1), F::from_f64_lossy(1.0 - b2));
    let step = F::from_f64_lossy(lr / bc1);
    let inv_bc2 = F::from_f64_lossy(1.0 / bc2);
    let eps = F::from_f64_lossy(eps);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = fb1 * m[i] + one_b1 * g;
        v[i] = fb2 * v[i] + one_b2 * g * g;
        let denom = (v[i] * inv_bc2).sqrt() + eps;
        param[i] = param[i] * decay - step * m[i] / denom;
    }
}

/// Scales every gradient in `sets` by `max_norm/‖g‖₂` when the global norm
/// exceeds `max_norm`. Returns the factor applied (1 when untouched).
pub fn clip_grad_norm<F: Float>(sets: &mut [&mut ParamSet<F>], max_norm: f64) -> Result<f64> {
    for s in sets.iter() {
        s.check_finite_grads()?;
    }
    let norm = sets.iter().map(|s| s.grad_sq_norm()).sum::<f64>().sqrt();
    if max_norm <= 0.0 || norm <= max_norm {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    for s in sets.iter_mut() {
        s.scale_grads(F::from_f64_lossy(scale));
    }
    Ok(scale)
}

/// AdamW state for one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamW<F: Float = f32> {
    cfg: AdamWConfig,
    t: u64,
    moments: Vec<(Vec<F>, Vec<F>)>,
}

impl<F: Float> AdamW<F> {
    pub fn new(cfg: AdamWConfig, params: &ParamSet<F>) -> Self {
        let moments = params
            .iter()
            .map(|p| (vec![F::zero(); p.tensor.numel()], vec![F::zero(); p.tensor.numel()]))
            .collect();
        AdamW { cfg, t: 0, moments }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Updates every parameter that holds a gradient, then clears the
    /// gradients. Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamSet<F>, lr: f64) -> Result<()> {
        params.check_finite_grads()?;
        if params.len() != self.moments.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} parameters, set has {}",
                self.moments.len(),
                params.len()
            )));
        }
        self.t += 1;
        for (p, (m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            let wd = if p.decay { self.cfg.weight_decay } else { 0.0 };
            let (data, grad) = p.tensor.data_and_grad_mut();
            let Some(grad) = grad else { continue };
            let grad = grad.to_vec();
            adamw_step(
                data,
                &grad,
                m,
                v,
                self.t,
                lr,
                (self.cfg.beta1, self.cfg.beta2),
                self.cfg.eps,
                wd,
            );
        }
        params.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn set_with_grads(grads: &[&[f64]]) -> ParamSet<f64> {
        let mut s = ParamSet::new();
        for (i, g) in grads.iter().enumerate() {
            let mut t = Tensor::<f64>::zeros(&[g.len()]);
            t.accumulate_grad(g).unwrap();
            s.push(format!("p{i}"), t, false);
        }
        s
    }

    #[test]
    fn clipping_halves_when_norm_is_twice_the_limit() {
        // ‖(3,4)‖ = 5 = 2 × 2.5
        let mut s = set_with_grads(&[&[3.0], &[4.0]]);
        let scale = clip_grad_norm(&mut [&mut s], 2.5).unwrap();
        assert_eq!(scale, 0.5);
        assert_eq!(s.get(0).tensor.grad().unwrap(), &[1.5]);
        assert_eq!(s.get(1).tensor.grad().unwrap(), &[2.0]);
    }

    #[test]
    fn clipping_leaves_small_gradients_alone() {
        let mut s = set_with_grads(&[&[0.3, 0.4]]);
        assert_eq!(clip_grad_norm(&mut [&mut s], 1.0).unwrap(), 1.0);
        assert_eq!(s.get(0).tensor.grad().unwrap(), &[0.3, 0.4]);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut s = set_with_grads(&[&[1.0], &[f64::NAN]]);
        let err = clip_grad_norm(&mut [&mut s], 1.0).unwrap_err();
        assert!(err.to_string().contains("p1"), "{err}");
    }

    #[test]
    fn adamw_matches_closed_form_on_scalar_quadratic() {
        // f(θ) = (θ − 3)², θ₀ = 1 → g = −4.
        // m₁ = 0.1·(−4) = −0.4, v₁ = 0.05·16 = 0.8
        // m̂ = −4, v̂ = 16, update = lr·(−4)/(4 + ε)
        // θ₁ = θ₀(1 − lr·wd) − lr·m̂/(√v̂ + ε)
        let (lr, wd, eps) = (0.1, 0.01, 1e-8);
        let mut theta = [1.0f64];
        let grad = [2.0 * (theta[0] - 3.0)];
        let (mut m, mut v) = ([0.0], [0.0]);
        adamw_step(&mut theta, &grad, &mut m, &mut v, 1, lr, (0.9, 0.95), eps, wd);
        let want = 1.0 * (1.0 - lr * wd) - lr * (-4.0) / (4.0 + eps);
        assert!((theta[0] - want).abs() < 1e-15, "{} vs {want}", theta[0]);
        assert!((m[0] + 0.4).abs() < 1e-15);
        assert!((v[0] - 0.8).abs() < 1e-12);

        // second step by hand
        let g2 = 2.0 * (theta[0] - 3.0);
        let m2 = 0.9 * -0.4 + 0.1 * g2;
        let v2 = 0.95 * 0.8 + 0.05 * g2 * g2;
        let mhat = m2 / (1.0 - 0.9f64.powi(2));
        let vhat = v2 / (1.0 - 0.95f64.powi(2));
        let want2 = theta[0] * (1.0 - lr * wd) - lr * mhat / (vhat.sqrt() + eps);
        adamw_step(&mut theta, &[g2], &mut m, &mut v, 2, lr, (0.9, 0.95), eps, wd);
        assert!((theta[0] - want2).abs() < 1e-14);
    }

    #[test]
    fn optimizer_skips_parameters_without_gradient() {
        let mut s = ParamSet::<f64>::new();
        s.push("a", Tensor::full(&[2], 1.0), true);
        s.push("b", Tensor::full(&[2], 1.0), true);
        s.get_mut(0).tensor.accumulate_grad(&[1.0, 1.0]).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.step(&mut s, 1e-2).unwrap();
        assert_ne!(s.get(0).tensor.data(), &[1.0, 1.0]);
        assert_eq!(s.get(1).tensor.data(), &[1.0, 1.0]);
        assert!(s.get(0).tensor.grad().is_none());
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let cfg = AdamWConfig {
            lr: 1.0,
            warmup_steps: 10,
            min_lr_ratio: 0.1,
            ..AdamWConfig::default()
        };
        assert!((cfg.lr_at(0, 100) - 0.1).abs() < 1e-12);
        assert!((cfg.lr_at(9, 100) - 1.0).abs() < 1e-12);
        assert!((cfg.lr_at(10, 100) - 1.0).abs() < 1e-12);
        assert!((cfg.lr_at(100, 100) - 0.1).abs() < 1e-12);
        assert!(cfg.lr_at(50, 100) < 1.0 && cfg.lr_at(50, 100) > 0.1);
    }
}
