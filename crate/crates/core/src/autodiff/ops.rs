use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Op, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{numel, rows_last};

pub(crate) const LN_EPS: f64 = 1e-5;

/// `rhs` broadcasts against `lhs` when it is a scalar or its shape is a
/// suffix of `lhs`'s shape.
fn broadcastable(lhs: &[usize], rhs: &[usize]) -> bool {
    numel(rhs) == 1 || (rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs)
}

pub(crate) fn softmax_rows(x: &[f64], n: usize, out: &mut [f64]) {
    for (xr, or) in x.chunks(n).zip(out.chunks_mut(n)) {
        let m = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = libm::exp(v - m);
            s += *o;
        }
        for o in or.iter_mut() {
            *o /= s;
        }
    }
}

pub(crate) fn log_softmax_rows(x: &[f64], n: usize, out: &mut [f64]) {
    for (xr, or) in x.chunks(n).zip(out.chunks_mut(n)) {
        let m = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + libm::log(xr.iter().map(|&v| libm::exp(v - m)).sum::<f64>());
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = v - lse;
        }
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub(crate) const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = libm::tanh(u);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `out[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] * b[n,k]^T`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k,n] += a[m,k]^T * b[m,n]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

fn matrix_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(shape_err(op, format!("expected a matrix, got {:?}", shape))),
    }
}

/// (outer, axis length, inner) decomposition used by axis reductions and concat.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

impl<'a> Tape<'a> {
    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b));
        if !broadcastable(&sa, sb) {
            return Err(shape_err(name, format!("{:?} and {:?} do not broadcast", sa, sb)));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let nb = vb.len();
        let out: Vec<f64> = va.iter().enumerate().map(|(i, &x)| f(x, vb[i % nb])).collect();
        self.push(name, sa, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x * c).collect();
        self.push("scale", self.shape(a).to_vec(), out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x + c).collect();
        self.push("add_scalar", self.shape(a).to_vec(), out, Op::AddScalar(a), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.shape(a))?;
        let (k2, n) = matrix_dims("matmul", self.shape(b))?;
        if k != k2 {
            return Err(shape_err("matmul", format!("inner dims {} vs {}", k, k2)));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a), self.value(b), &mut out, m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul_t", self.shape(a))?;
        let (n, k2) = matrix_dims("matmul_t", self.shape(b))?;
        if k != k2 {
            return Err(shape_err("matmul_t", format!("inner dims {} vs {}", k, k2)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a), self.value(b), &mut out, m, k, n);
        self.push("matmul_t", vec![m, n], out, Op::MatMulT(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = matrix_dims("transpose", self.shape(a))?;
        let va = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = va[i * n + j];
            }
        }
        self.push("transpose", vec![n, m], out, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).len() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", self.shape(a), shape)));
        }
        let out = self.value(a).to_vec();
        self.push("reshape", shape.to_vec(), out, Op::Reshape(a), &[a])
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(name, self.shape(a).to_vec(), out, op, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, libm::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary("gelu", a, gelu, Op::Gelu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, libm::exp, Op::Exp(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (_, n) = rows_last(self.shape(a));
        let mut out = vec![0.0; self.value(a).len()];
        if n > 0 {
            softmax_rows(self.value(a), n, &mut out);
        }
        self.push("softmax", self.shape(a).to_vec(), out, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (_, n) = rows_last(self.shape(a));
        let mut out = vec![0.0; self.value(a).len()];
        if n > 0 {
            log_softmax_rows(self.value(a), n, &mut out);
        }
        self.push("log_softmax", self.shape(a).to_vec(), out, Op::LogSoftmax(a), &[a])
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (rows, n) = rows_last(self.shape(x));
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(shape_err(
                "layer_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", self.shape(x), self.shape(gamma), self.shape(beta)),
            ));
        }
        let (vx, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let mut out = vec![0.0; rows * n];
        let mut xhat = vec![0.0; rows * n];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = &vx[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / libm::sqrt(var + LN_EPS);
            rstd[r] = rs;
            for j in 0..n {
                let xh = (row[j] - mean) * rs;
                xhat[r * n + j] = xh;
                out[r * n + j] = xh * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.push("layer_norm", shape, out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta])
    }

    /// Gathers rows of `table: [V, d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = matrix_dims("embedding", self.shape(table))?;
        let vt = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::OutOfRange { what: "embedding table", index: id, size: v });
            }
            out.extend_from_slice(&vt[id * d..(id + 1) * d]);
        }
        self.push("embedding", vec![ids.len(), d], out, Op::Embedding { table, ids: ids.to_vec() }, &[table])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {} for shape {:?}", axis, base)));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != base.len() || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(shape_err("concat", format!("{:?} vs {:?} on axis {}", base, s, axis)));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis] * inner;
                out.extend_from_slice(&self.value(*p)[o * len..(o + 1) * len]);
            }
        }
        self.push("concat", shape, out, Op::Concat { parts: parts.to_vec(), axis }, parts)
    }

    /// Slice `[start, start + len)` along the first axis.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let total = *shape.first().ok_or_else(|| shape_err("rows", format!("{:?}", shape)))?;
        if start + len > total {
            return Err(Error::OutOfRange { what: "rows", index: start + len, size: total });
        }
        let inner = numel(&shape[1..]);
        let out = self.value(x)[start * inner..(start + len) * inner].to_vec();
        let mut new_shape = shape;
        new_shape[0] = len;
        self.push("rows", new_shape, out, Op::Rows { x, start }, &[x])
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(shape_err("mean_axis", format!("axis {} for shape {:?}", axis, shape)));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let vx = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += vx[base + i];
                }
            }
        }
        for v in out.iter_mut() {
            *v /= len as f64;
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        self.push("mean_axis", new_shape, out, Op::MeanAxis { x, axis }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.push("sum", Vec::new(), vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::Empty("mean"));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean negative log-likelihood of integer targets under `logits: [n, V]`.
    /// `None` targets (padding) are excluded from the mean.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (rows, v) = matrix_dims("cross_entropy", self.shape(logits))?;
        if targets.len() != rows {
            return Err(shape_err("cross_entropy", format!("{} targets for {} rows", targets.len(), rows)));
        }
        let vl = self.value(logits);
        let mut logp = vec![0.0; rows * v];
        log_softmax_rows(vl, v, &mut logp);
        let mut loss = 0.0;
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= v {
                    return Err(Error::OutOfRange { what: "cross_entropy target", index: t, size: v });
                }
                loss -= logp[r * v + t];
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Empty("cross_entropy targets"));
        }
        let probs = logp.iter().map(|&l| libm::exp(l)).collect();
        self.push(
            "cross_entropy",
            Vec::new(),
            vec![loss / count as f64],
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count },
            &[logits],
        )
    }

    /// Row-wise KL(N(mu_q, exp(logvar_q)) || N(mu_p, exp(logvar_p))) for
    /// diagonal Gaussians. All four inputs share one shape `[.., k]`; the
    /// result drops the last axis.
    pub fn kl_gaussian(&mut self, mu_q: Var, logvar_q: Var, mu_p: Var, logvar_p: Var) -> Result<Var> {
        let shape = self.shape(mu_q).to_vec();
        for v in [logvar_q, mu_p, logvar_p] {
            if self.shape(v) != shape.as_slice() {
                return Err(shape_err("kl_gaussian", format!("{:?} vs {:?}", shape, self.shape(v))));
            }
        }
        let (rows, k) = rows_last(&shape);
        let (mq, lq, mp, lp) = (self.value(mu_q), self.value(logvar_q), self.value(mu_p), self.value(logvar_p));
        let mut out = vec![0.0; rows];
        #[allow(clippy::needless_range_loop)]
        for r in 0..rows {
            let mut s = 0.0;
            for j in r * k..(r + 1) * k {
                let d = mq[j] - mp[j];
                s += libm::exp(lq[j] - lp[j]) + d * d * libm::exp(-lp[j]) - 1.0 + lp[j] - lq[j];
            }
            out[r] = 0.5 * s;
        }
        let mut out_shape = shape;
        out_shape.pop();
        self.push(
            "kl_gaussian",
            out_shape,
            out,
            Op::KlGaussian { mu_q, logvar_q, mu_p, logvar_p },
            &[mu_q, logvar_q, mu_p, logvar_p],
        )
    }

    /// Multi-head scaled dot-product attention with a causal mask.
    ///
    /// `q: [n, d]`, `k, v: [s, d]`; heads split the feature axis into
    /// contiguous blocks of `d / heads`. Query row `i` sits at absolute
    /// position `offset + i` and attends to keys `0..=offset + i`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, offset: usize) -> Result<Var> {
        let (n, d) = matrix_dims("attention", self.shape(q))?;
        let (s, dk) = matrix_dims("attention", self.shape(k))?;
        if self.shape(v) != [s, d] || dk != d || heads == 0 || d % heads != 0 {
            return Err(shape_err(
                "attention",
                format!("q {:?}, k {:?}, v {:?}, heads {}", self.shape(q), self.shape(k), self.shape(v), heads),
            ));
        }
        if offset + n > s {
            return Err(shape_err("attention", format!("offset {} + {} queries > {} keys", offset, n, s)));
        }
        let dh = d / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; heads * n * s];
        let mut out = vec![0.0; n * d];
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..n {
                let limit = offset + i + 1;
                let prow = &mut probs[(h * n + i) * s..(h * n + i + 1) * s];
                let qi = &vq[i * d + c0..i * d + c0 + dh];
                let mut m = f64::NEG_INFINITY;
                for j in 0..limit {
                    let kj = &vk[j * d + c0..j * d + c0 + dh];
                    let sc = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                    prow[j] = sc;
                    m = m.max(sc);
                }
                let mut z = 0.0;
                for p in prow[..limit].iter_mut() {
                    *p = libm::exp(*p - m);
                    z += *p;
                }
                for p in prow[..limit].iter_mut() {
                    *p /= z;
                }
                let orow = &mut out[i * d + c0..i * d + c0 + dh];
                for j in 0..limit {
                    let pj = prow[j];
                    for (o, &x) in orow.iter_mut().zip(&vv[j * d + c0..j * d + c0 + dh]) {
                        *o += pj * x;
                    }
                }
            }
        }
        self.push("attention", vec![n, d], out, Op::Attention { q, k, v, heads, offset, probs }, &[q, k, v])
    }
}
