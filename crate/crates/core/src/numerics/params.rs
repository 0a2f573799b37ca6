use super::{Float, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// A named parameter and whether weight decay applies to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F: Float = f32> {
    pub name: String,
    pub tensor: Tensor<F>,
    pub decay: bool,
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<F: Float = f32> {
    params: Vec<Param<F>>,
}

impl<F: Float> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<F>, decay: bool) -> usize {
        self.params.push(Param {
            name: name.into(),
            tensor: tensor.with_grad(),
            decay,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param<F> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param<F> {
        &mut self.params[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.index_of(name).map(|i| &self.params[i].tensor)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Places every parameter on the tape. With `trainable = false` no
    /// gradient flows back (used for frozen teachers).
    pub fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(&p.tensor)
                } else {
                    let mut t = p.tensor.clone();
                    t.set_requires_grad(false);
                    tape.leaf(&t)
                }
            })
            .collect()
    }

    /// Adds the tape's leaf gradients into each parameter's grad buffer.
    pub fn accumulate_grads(&mut self, tape: &Tape<F>, vars: &[Var]) -> Result<()> {
        for (p, v) in self.params.iter_mut().zip(vars) {
            if let Some(g) = tape.grad(*v) {
                p.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Multiplies every gradient by `factor`.
    pub fn scale_grads(&mut self, factor: F) {
        for p in &mut self.params {
            if let Some(g) = p.tensor.grad_mut() {
                g.iter_mut().for_each(|v| *v = *v * factor);
            }
        }
    }

    /// Fails on the first parameter holding a non-finite gradient.
    pub fn check_finite_grads(&self) -> Result<()> {
        for p in &self.params {
            if let Some(g) = p.tensor.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn grad_sq_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.tensor.grad())
            .flat_map(|g| g.iter())
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum()
    }

    /// All parameter values concatenated in order.
    pub fn flat_values(&self) -> Vec<F> {
        self.params
            .iter()
            .flat_map(|p| p.tensor.data().iter().copied())
            .collect()
    }
}
