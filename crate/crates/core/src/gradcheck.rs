//! Central finite-difference gradient checking.

use alloc::vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn eval<F>(f: &F, x: Tensor) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let out = f(&mut tape, xv)?;
    tape.item(out).ok_or_else(|| Error::NonScalarLoss(tape.shape(out).to_vec()))
}

/// Maximum over coordinates of `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`
/// for the scalar function `f` at `x`, with central differences of step `eps`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let xv = tape.variable(x.clone());
        let out = f(&mut tape, xv)?;
        let grads = tape.backward(out)?;
        grads.get(xv).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; x.numel()])
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.update(|d| d[i] += eps)?;
        let mut minus = x.clone();
        minus.update(|d| d[i] -= eps)?;
        let numeric = (eval(&f, plus)? - eval(&f, minus)?) / (2.0 * eps);
        let denom = (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
