//! Trainable parameters and the Adam optimiser.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A tensor with an accumulating gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self { name: name.into(), value, grad: None }
    }
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Parameter {
        &self.params[i]
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.params[i].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Registers every parameter on `tape` (borrowed, no copy).
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| tape.borrowed(&p.value, trainable)).collect()
    }

    /// Adds the gradients of `vars` (as returned by [`ParamSet::bind`]) into
    /// the parameter buffers. Parameters the loss did not reach receive zeros.
    pub fn accumulate(&mut self, vars: &[Var], grads: &Gradients) {
        for (p, v) in self.params.iter_mut().zip(vars) {
            let buf = p.grad.get_or_insert_with(|| vec![0.0; p.value.numel()]);
            if let Some(g) = grads.get(*v) {
                buf.iter_mut().zip(g).for_each(|(b, x)| *b += x);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            match &mut p.grad {
                Some(g) => g.iter_mut().for_each(|x| *x = 0.0),
                None => p.grad = Some(vec![0.0; p.value.numel()]),
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        libm::sqrt(self.params.iter().flat_map(|p| p.grad.iter().flatten()).map(|g| g * g).sum())
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.params.iter_mut().filter_map(|p| p.grad.as_mut()) {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
        norm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64) -> Result<Self> {
        let ok = lr > 0.0 && betas.0 > 0.0 && betas.0 < 1.0 && betas.1 > 0.0 && betas.1 < 1.0 && eps > 0.0;
        if !ok {
            return Err(Error::InvalidConfig(alloc::format!(
                "adam needs lr > 0, betas in (0,1), eps > 0; got lr={lr}, betas={betas:?}, eps={eps}"
            )));
        }
        Ok(Self { lr, beta1: betas.0, beta2: betas.1, eps, step: 0, m: Vec::new(), v: Vec::new() })
    }

    pub fn with_lr(lr: f64) -> Result<Self> {
        Self::new(lr, (0.9, 0.999), 1e-8)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update using the accumulated gradients.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if let Some(i) = params.params.iter().position(|p| p.grad.is_none()) {
            return Err(Error::MissingGrad(i));
        }
        if self.m.is_empty() {
            self.m = params.params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, m), v) in params.params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.as_ref().expect("checked above");
            p.value.update(|w| {
                for j in 0..w.len() {
                    m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                    v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    w[j] -= lr * mhat / (libm::sqrt(vhat) + eps);
                }
            })?;
        }
        Ok(())
    }
}
