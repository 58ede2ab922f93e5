//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Leaves either own their
//! values or borrow them (model parameters are borrowed, never copied).
//! Every primitive validates shapes, records itself, and checks that its
//! output is finite. [`Tape::backward`] walks the nodes in reverse
//! insertion order, which is a valid reverse topological order because a
//! node can only reference nodes created before it.

mod backward;
mod ops;

use alloc::borrow::Cow;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

pub use backward::Gradients;

/// Numerically stable softmax of one row.
pub fn softmax_row(x: &[f64], out: &mut [f64]) {
    ops::softmax_rows(x, x.len().max(1), out)
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax_row(x: &[f64], out: &mut [f64]) {
    ops::log_softmax_rows(x, x.len().max(1), out)
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Tanh(Var),
    Softplus(Var),
    Gelu(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Embedding { table: Var, ids: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Rows { x: Var, start: usize },
    MeanAxis { x: Var, axis: usize },
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
    KlGaussian { mu_q: Var, logvar_q: Var, mu_p: Var, logvar_p: Var },
    Attention { q: Var, k: Var, v: Var, heads: usize, offset: usize, probs: Vec<f64> },
}

pub(crate) struct Node<'a> {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Cow<'a, [f64]>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Ordered record of primitive operations.
#[derive(Default)]
pub struct Tape<'a> {
    pub(crate) nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Owned leaf. `requires_grad` marks it as tracked by [`Tape::backward`].
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(t.into_data()),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn variable(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    /// Leaf that borrows its value for the lifetime of the tape.
    pub fn borrowed(&mut self, t: &'a Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.data()),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("tape values are finite")
    }

    pub fn item(&self, v: Var) -> Option<f64> {
        let vals = self.value(v);
        (vals.len() == 1).then(|| vals[0])
    }

    pub(crate) fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        parents: &[Var],
    ) -> Result<Var> {
        debug_assert_eq!(numel(&shape), value.len());
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { shape, value: Cow::Owned(value), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }
}
