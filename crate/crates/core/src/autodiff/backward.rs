use alloc::vec;
use alloc::vec::Vec;

use super::ops::{gelu_grad, gemm, gemm_nt, gemm_tn, sigmoid};
use super::{Node, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, rows_last};

/// Gradients of a scalar loss with respect to the tracked leaves of a tape.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when `v` is untracked or does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node<'_>], v: Var) -> Option<&'g mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

impl<'a> Tape<'a> {
    /// Reverse pass from a scalar `loss`. Only leaf gradients are retained.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if numel(shape) != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let y = &node.value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if let Some(ga) = acc(&mut grads, nodes, *a) {
                        ga.iter_mut().zip(&g).for_each(|(x, gi)| *x += gi);
                    }
                    if let Some(gb) = acc(&mut grads, nodes, *b) {
                        let nb = gb.len();
                        for (j, gi) in g.iter().enumerate() {
                            gb[j % nb] += sign * gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let nb = vb.len();
                    if let Some(ga) = acc(&mut grads, nodes, *a) {
                        for (j, x) in ga.iter_mut().enumerate() {
                            *x += g[j] * vb[j % nb];
                        }
                    }
                    if let Some(gb) = acc(&mut grads, nodes, *b) {
                        for (j, gi) in g.iter().enumerate() {
                            gb[j % nb] += gi * va[j];
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if let Some(ga) = acc(&mut grads, nodes, *a) {
                        ga.iter_mut().zip(&g).for_each(|(x, gi)| *x += c * gi);
                    }
                }
                Op::AddScalar(a) | Op::Reshape(a) => {
                    if let Some(ga) = acc(&mut grads, nodes, *a) {
                        ga.iter_mut().zip(&g).for_each(|(x, gi)| *x += gi);
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[1];
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(ga) = acc(&mut grads, nodes, *a) {
                        gemm_nt(&g, vb, ga, m, n, k);
                    }
                    if let Some(gb) = acc(&mut grads, nodes, *b) {
                        gemm_tn(va, &g, gb, m, k, n);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[0];
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(ga) = acc(&mut grads, nodes, *a) {
                        gemm(&g, vb, ga, m, n, k);
                    }
                    if let Some(gb) = acc(&mut grads, nodes, *b) {
                        gemm_tn(&g, va, gb, m, n, k);
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    if let Some(ga) = acc(&mut grads, nodes, *a) {
                        for r in 0..m {
                            for c in 0..n {
                                ga[r * n + c] += g[c * m + r];
                            }
                        }
                    }
                }
                Op::Tanh(a) => {
                    if let Some(ga) = acc(&mut grads, nodes, *a) {
                        for (j, x) in ga.iter_mut().enumerate() {
                            *x += g[j] * (1.0 - y[j] * y[j]);
                        }
                    }
                }
                Op::Softplus(a) | Op::Gelu(a) => {
                    let is_gelu = matches!(node.op, Op::Gelu(_));
                    let va = &nodes[a.0].value;
                    if let Some(ga) = acc(&mut grads, nodes, *a) {
                        for (j, x) in ga.iter_mut().enumerate() {
                            let d = if is_gelu { gelu_grad(va[j]) } else { sigmoid(va[j]) };
                            *x += g[j] * d;
                        }
                    }
                }
                Op::Exp(a) => {
                    if let Some(ga) = acc(&mut grads, nodes, *a) {
                        for (j, x) in ga.iter_mut().enumerate() {
                            *x += g[j] * y[j];
                        }
                    }
                }
                Op::Softmax(a) => {
                    let (_, n) = rows_last(&node.shape);
                    if let Some(ga) = acc(&mut grads, nodes, *a) {
                        for ((gr, yr), out) in g.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                out[j] += yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    let (_, n) = rows_last(&node.shape);
                    if let Some(ga) = acc(&mut grads, nodes, *a) {
                        for ((gr, yr), out) in g.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                            let s: f64 = gr.iter().sum();
                            for j in 0..n {
                                out[j] += gr[j] - libm::exp(yr[j]) * s;
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let (rows, n) = rows_last(&node.shape);
                    let gv = &nodes[gamma.0].value;
                    if let Some(gb) = acc(&mut grads, nodes, *beta) {
                        for r in 0..rows {
                            for j in 0..n {
                                gb[j] += g[r * n + j];
                            }
                        }
                    }
                    if let Some(gg) = acc(&mut grads, nodes, *gamma) {
                        for r in 0..rows {
                            for j in 0..n {
                                gg[j] += g[r * n + j] * xhat[r * n + j];
                            }
                        }
                    }
                    if let Some(gx) = acc(&mut grads, nodes, *x) {
                        let mut dxhat = vec![0.0; n];
                        for r in 0..rows {
                            let xh = &xhat[r * n..(r + 1) * n];
                            for j in 0..n {
                                dxhat[j] = g[r * n + j] * gv[j];
                            }
                            let m1 = dxhat.iter().sum::<f64>() / n as f64;
                            let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                            for j in 0..n {
                                gx[r * n + j] += rstd[r] * (dxhat[j] - m1 - xh[j] * m2);
                            }
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let d = nodes[table.0].shape[1];
                    if let Some(gt) = acc(&mut grads, nodes, *table) {
                        for (r, &id) in ids.iter().enumerate() {
                            for j in 0..d {
                                gt[id * d + j] += g[r * d + j];
                            }
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let shape = &node.shape;
                    let outer = numel(&shape[..*axis]);
                    let inner = numel(&shape[axis + 1..]);
                    let row = shape[*axis] * inner;
                    let mut col = 0;
                    for p in parts {
                        let len = nodes[p.0].shape[*axis] * inner;
                        if let Some(gp) = acc(&mut grads, nodes, *p) {
                            for o in 0..outer {
                                for j in 0..len {
                                    gp[o * len + j] += g[o * row + col + j];
                                }
                            }
                        }
                        col += len;
                    }
                }
                Op::Rows { x, start } => {
                    let inner = numel(&node.shape[1..]);
                    if let Some(gx) = acc(&mut grads, nodes, *x) {
                        for (j, gi) in g.iter().enumerate() {
                            gx[start * inner + j] += gi;
                        }
                    }
                }
                Op::MeanAxis { x, axis } => {
                    let xs = &nodes[x.0].shape;
                    let outer = numel(&xs[..*axis]);
                    let len = xs[*axis];
                    let inner = numel(&xs[axis + 1..]);
                    if let Some(gx) = acc(&mut grads, nodes, *x) {
                        let inv = 1.0 / len as f64;
                        for o in 0..outer {
                            for a in 0..len {
                                for i in 0..inner {
                                    gx[(o * len + a) * inner + i] += g[o * inner + i] * inv;
                                }
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    if let Some(ga) = acc(&mut grads, nodes, *a) {
                        ga.iter_mut().for_each(|x| *x += g[0]);
                    }
                }
                Op::CrossEntropy { logits, targets, probs, count } => {
                    let v = nodes[logits.0].shape[1];
                    let c = g[0] / *count as f64;
                    if let Some(gl) = acc(&mut grads, nodes, *logits) {
                        for (r, t) in targets.iter().enumerate() {
                            if let Some(t) = *t {
                                for j in 0..v {
                                    gl[r * v + j] += c * probs[r * v + j];
                                }
                                gl[r * v + t] -= c;
                            }
                        }
                    }
                }
                Op::KlGaussian { mu_q, logvar_q, mu_p, logvar_p } => {
                    let (rows, k) = rows_last(&nodes[mu_q.0].shape);
                    let (mq, lq, mp, lp) =
                        (&nodes[mu_q.0].value, &nodes[logvar_q.0].value, &nodes[mu_p.0].value, &nodes[logvar_p.0].value);
                    let n = rows * k;
                    let mut d_mq = vec![0.0; n];
                    let mut d_lq = vec![0.0; n];
                    let mut d_lp = vec![0.0; n];
                    #[allow(clippy::needless_range_loop)]
                    for r in 0..rows {
                        for j in r * k..(r + 1) * k {
                            let diff = mq[j] - mp[j];
                            let ratio = libm::exp(lq[j] - lp[j]);
                            let inv_p = libm::exp(-lp[j]);
                            d_mq[j] = g[r] * diff * inv_p;
                            d_lq[j] = g[r] * 0.5 * (ratio - 1.0);
                            d_lp[j] = g[r] * 0.5 * (1.0 - ratio - diff * diff * inv_p);
                        }
                    }
                    if let Some(ga) = acc(&mut grads, nodes, *mu_q) {
                        ga.iter_mut().zip(&d_mq).for_each(|(x, d)| *x += d);
                    }
                    if let Some(ga) = acc(&mut grads, nodes, *mu_p) {
                        ga.iter_mut().zip(&d_mq).for_each(|(x, d)| *x -= d);
                    }
                    if let Some(ga) = acc(&mut grads, nodes, *logvar_q) {
                        ga.iter_mut().zip(&d_lq).for_each(|(x, d)| *x += d);
                    }
                    if let Some(ga) = acc(&mut grads, nodes, *logvar_p) {
                        ga.iter_mut().zip(&d_lp).for_each(|(x, d)| *x += d);
                    }
                }
                Op::Attention { q, k, v, heads, offset, probs } => {
                    let (n, d) = (nodes[q.0].shape[0], nodes[q.0].shape[1]);
                    let s = nodes[k.0].shape[0];
                    let dh = d / heads;
                    let scale = 1.0 / libm::sqrt(dh as f64);
                    let (vq, vk, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
                    let mut dq = vec![0.0; n * d];
                    let mut dk = vec![0.0; s * d];
                    let mut dv = vec![0.0; s * d];
                    let mut dscore = vec![0.0; s];
                    for h in 0..*heads {
                        let c0 = h * dh;
                        for i in 0..n {
                            let limit = offset + i + 1;
                            let prow = &probs[(h * n + i) * s..(h * n + i + 1) * s];
                            let gi = &g[i * d + c0..i * d + c0 + dh];
                            let mut dot = 0.0;
                            for j in 0..limit {
                                let vj = &vv[j * d + c0..j * d + c0 + dh];
                                let dp: f64 = gi.iter().zip(vj).map(|(a, b)| a * b).sum();
                                dscore[j] = dp;
                                dot += prow[j] * dp;
                                for (t, &gx) in gi.iter().enumerate() {
                                    dv[j * d + c0 + t] += prow[j] * gx;
                                }
                            }
                            for j in 0..limit {
                                let ds = prow[j] * (dscore[j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for t in 0..dh {
                                    dq[i * d + c0 + t] += ds * vk[j * d + c0 + t];
                                    dk[j * d + c0 + t] += ds * vq[i * d + c0 + t];
                                }
                            }
                        }
                    }
                    for (var, delta) in [(*q, dq), (*k, dk), (*v, dv)] {
                        if let Some(gx) = acc(&mut grads, nodes, var) {
                            gx.iter_mut().zip(&delta).for_each(|(x, d)| *x += d);
                        }
                    }
                }
            }
        }
        for g in grads.iter().flatten() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("backward"));
            }
        }
        Ok(Gradients { grads })
    }
}
