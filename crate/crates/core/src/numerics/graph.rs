//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] is an append-only arena. Every operation evaluates eagerly and
//! records its parents, so creation order is already a topological order and
//! [`Graph::backward`] simply walks the arena from the loss node downwards,
//! touching each node once. Leaves may borrow their value (model parameters)
//! or own it (inputs and constants).

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::numerics::matrix::{gemm_nt, gemm_tn};
use crate::numerics::{ops, Matrix};
use crate::scalar::Scalar;

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `m x n` plus a broadcast `1 x n` row.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    MaxPool { input: NodeId, argmax: Vec<usize> },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Transpose(NodeId),
    Reshape(NodeId),
    Sum(NodeId),
    Mse(NodeId, NodeId),
}

/// Short name of the primitive that produced a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpTag {
    Leaf,
    MatMul,
    Add,
    AddRow,
    Mul,
    Scale,
    Relu,
    SoftmaxRows,
    MaxPool,
    ConcatCols,
    ConcatRows,
    Transpose,
    Reshape,
    Sum,
    Mse,
}

struct Node<'a, S: Scalar> {
    value: Cow<'a, Matrix<S>>,
    op: Op<S>,
}

pub struct Graph<'a, S: Scalar> {
    nodes: Vec<Node<'a, S>>,
    grads: Vec<Option<Matrix<S>>>,
}

impl<S: Scalar> Default for Graph<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, S: Scalar> Graph<'a, S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Matrix<S>>, op: Op<S>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that borrows its value, typically a model parameter.
    pub fn param(&mut self, value: &'a Matrix<S>) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Leaf)
    }

    /// Leaf that owns its value, typically an input or constant.
    pub fn input(&mut self, value: Matrix<S>) -> NodeId {
        self.push(Cow::Owned(value), Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Matrix<S> {
        &self.nodes[id.0].value
    }

    pub fn op_tag(&self, id: NodeId) -> OpTag {
        match &self.nodes[id.0].op {
            Op::Leaf => OpTag::Leaf,
            Op::MatMul(..) => OpTag::MatMul,
            Op::Add(..) => OpTag::Add,
            Op::AddRow(..) => OpTag::AddRow,
            Op::Mul(..) => OpTag::Mul,
            Op::Scale(..) => OpTag::Scale,
            Op::Relu(..) => OpTag::Relu,
            Op::SoftmaxRows(..) => OpTag::SoftmaxRows,
            Op::MaxPool { .. } => OpTag::MaxPool,
            Op::ConcatCols(..) => OpTag::ConcatCols,
            Op::ConcatRows(..) => OpTag::ConcatRows,
            Op::Transpose(..) => OpTag::Transpose,
            Op::Reshape(..) => OpTag::Reshape,
            Op::Sum(..) => OpTag::Sum,
            Op::Mse(..) => OpTag::Mse,
        }
    }

    /// Gradient of the last `backward` loss with respect to `id`.
    ///
    /// Zero (of the node's shape) when the node was not reached.
    pub fn grad(&self, id: NodeId) -> Matrix<S> {
        match self.grads.get(id.0) {
            Some(Some(g)) => g.clone(),
            _ => {
                let (r, c) = self.value(id).shape();
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take_grad(&mut self, id: NodeId) -> Matrix<S> {
        match self.grads.get_mut(id.0).and_then(Option::take) {
            Some(g) => g,
            None => {
                let (r, c) = self.value(id).shape();
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Cow::Owned(out), Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(Cow::Owned(out), Op::Add(a, b)))
    }

    /// Adds the `1 x n` row `bias` to every row of `x`.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} plus row {:?}", vx.shape(), vb.shape()),
            ));
        }
        let mut out = vx.clone();
        let cols = out.cols();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            for (o, &b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        Ok(self.push(Cow::Owned(out), Op::AddRow(x, bias)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Matrix::new(va.rows(), va.cols(), data)?;
        Ok(self.push(Cow::Owned(out), Op::Mul(a, b)))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: NodeId, factor: S) -> NodeId {
        let out = self.value(x).map(|v| v * factor);
        self.push(Cow::Owned(out), Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = ops::relu(self.value(x));
        self.push(Cow::Owned(out), Op::Relu(x))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let out = ops::softmax_rows(self.value(x));
        self.push(Cow::Owned(out), Op::SoftmaxRows(x))
    }

    pub fn maxpool1d(&mut self, x: NodeId, kernel: usize) -> Result<NodeId> {
        let (out, argmax) = ops::maxpool1d(self.value(x), kernel)?;
        Ok(self.push(Cow::Owned(out), Op::MaxPool { input: x, argmax }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Matrix<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_cols(&values)?;
        Ok(self.push(Cow::Owned(out), Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Matrix<S>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ops::concat_rows(&values)?;
        Ok(self.push(Cow::Owned(out), Op::ConcatRows(parts.to_vec())))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).transpose();
        self.push(Cow::Owned(out), Op::Transpose(x))
    }

    /// Reinterprets the row-major data under a new shape.
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let out = self.value(x).reshaped(rows, cols)?;
        Ok(self.push(Cow::Owned(out), Op::Reshape(x)))
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = Matrix::filled(1, 1, self.value(x).sum());
        self.push(Cow::Owned(out), Op::Sum(x))
    }

    /// Mean squared error as a `1 x 1` node.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let loss = ops::mse(self.value(pred), self.value(target))?;
        Ok(self.push(Cow::Owned(Matrix::filled(1, 1, loss)), Op::Mse(pred, target)))
    }

    /// Populates gradients of the scalar node `loss` for every node it reaches.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss node, got {}x{}",
                shape.0, shape.1
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Matrix::filled(1, 1, S::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, contribution: Matrix<S>) {
        match &mut self.grads[id.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn zeros_like(&self, id: NodeId) -> Matrix<S> {
        let (r, c) = self.value(id).shape();
        Matrix::zeros(r, c)
    }

    fn propagate(&mut self, i: usize, g: &Matrix<S>) {
        // Contributions are computed against immutable node values and then
        // accumulated, so split the borrow explicitly.
        let mut pending: Vec<(NodeId, Matrix<S>)> = Vec::with_capacity(2);
        {
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = self.zeros_like(*a);
                    gemm_nt(g, vb, &mut ga);
                    let mut gb = self.zeros_like(*b);
                    gemm_tn(va, g, &mut gb);
                    pending.push((*a, ga));
                    pending.push((*b, gb));
                }
                Op::Add(a, b) => {
                    pending.push((*a, g.clone()));
                    pending.push((*b, g.clone()));
                }
                Op::AddRow(x, bias) => {
                    let cols = g.cols();
                    let mut gb = Matrix::zeros(1, cols);
                    for row in g.data().chunks(cols.max(1)) {
                        for (o, &v) in gb.data_mut().iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    pending.push((*x, g.clone()));
                    pending.push((*bias, gb));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = Matrix::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * vb.get(r, c));
                    let gb = Matrix::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * va.get(r, c));
                    pending.push((*a, ga));
                    pending.push((*b, gb));
                }
                Op::Scale(x, factor) => {
                    let f = *factor;
                    pending.push((*x, g.map(|v| v * f)));
                }
                Op::Relu(x) => {
                    let vx = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(vx.data())
                        .map(|(&gv, &xv)| if xv > S::zero() { gv } else { S::zero() })
                        .collect();
                    pending.push((*x, Matrix::new(g.rows(), g.cols(), data).expect("shape")));
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let cols = y.cols().max(1);
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for ((out, yr), gr) in gx
                        .data_mut()
                        .chunks_mut(cols)
                        .zip(y.data().chunks(cols))
                        .zip(g.data().chunks(cols))
                    {
                        let dot = yr.iter().zip(gr).fold(S::zero(), |a, (&yv, &gv)| a + yv * gv);
                        for ((o, &yv), &gv) in out.iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    pending.push((*x, gx));
                }
                Op::MaxPool { input, argmax } => {
                    let mut gx = self.zeros_like(*input);
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        gx.data_mut()[src] += gv;
                    }
                    pending.push((*input, gx));
                }
                Op::ConcatCols(parts) => {
                    let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
                    let pieces = ops::split_cols(g, &widths).expect("concat widths");
                    pending.extend(parts.iter().copied().zip(pieces));
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.value(p).shape();
                        let slice = g.data()[offset..offset + r * c].to_vec();
                        offset += r * c;
                        pending.push((p, Matrix::new(r, c, slice).expect("shape")));
                    }
                }
                Op::Transpose(x) => pending.push((*x, g.transpose())),
                Op::Reshape(x) => {
                    let (r, c) = self.value(*x).shape();
                    pending.push((*x, g.reshaped(r, c).expect("reshape")));
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    pending.push((*x, Matrix::filled(r, c, g.get(0, 0))));
                }
                Op::Mse(pred, target) => {
                    let (vp, vt) = (self.value(*pred), self.value(*target));
                    let n = S::of_usize(vp.len().max(1));
                    let factor = S::of(2.0) * g.get(0, 0) / n;
                    let data: Vec<S> = vp
                        .data()
                        .iter()
                        .zip(vt.data())
                        .map(|(&p, &t)| factor * (p - t))
                        .collect();
                    let gp = Matrix::new(vp.rows(), vp.cols(), data).expect("shape");
                    let gt = gp.map(|v| -v).reshaped(vt.rows(), vt.cols()).expect("shape");
                    pending.push((*pred, gp));
                    pending.push((*target, gt));
                }
            }
        }
        for (id, contribution) in pending {
            self.accumulate(id, contribution);
        }
    }
}
