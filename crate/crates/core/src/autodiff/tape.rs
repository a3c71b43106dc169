//! Define-by-run computation tape and its reverse sweep.
//!
//! Every primitive appends one node holding its output value; the reverse
//! sweep walks nodes from the loss back to index 0, so each node is visited
//! once and operands always precede their consumers.

use std::fmt;
use std::str::FromStr;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kinds understood by [`Tape::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Add,
    Hadamard,
    Sigmoid,
    Tanh,
    Relu,
    SoftmaxRows,
    ConcatCols,
    Transpose,
    SumAll,
    FrobeniusSq,
    Scale,
    AddRow,
    SliceCols,
    Reshape,
    Sqrt,
    XLogX,
    LogSoftmaxRows,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Hadamard => "hadamard",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::ConcatCols => "concat_cols",
            OpKind::Transpose => "transpose",
            OpKind::SumAll => "sum_all",
            OpKind::FrobeniusSq => "frobenius_sq",
            OpKind::Scale => "scale",
            OpKind::AddRow => "add_row",
            OpKind::SliceCols => "slice_cols",
            OpKind::Reshape => "reshape",
            OpKind::Sqrt => "sqrt",
            OpKind::XLogX => "xlogx",
            OpKind::LogSoftmaxRows => "log_softmax_rows",
        }
    }

    pub const ALL: [OpKind; 18] = [
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Hadamard,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Relu,
        OpKind::SoftmaxRows,
        OpKind::ConcatCols,
        OpKind::Transpose,
        OpKind::SumAll,
        OpKind::FrobeniusSq,
        OpKind::Scale,
        OpKind::AddRow,
        OpKind::SliceCols,
        OpKind::Reshape,
        OpKind::Sqrt,
        OpKind::XLogX,
        OpKind::LogSoftmaxRows,
    ];
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnsupportedOp(s.to_string()))
    }
}

/// Non-tensor arguments some primitives need.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum OpAttr {
    #[default]
    None,
    Scale(f64),
    Cols(usize, usize),
    Shape(Vec<usize>),
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Hadamard(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    Transpose(Var),
    SumAll(Var),
    FrobeniusSq(Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    SliceCols(Var, usize),
    Reshape(Var),
    Sqrt(Var),
    XLogX(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `var`, or `None` if it is detached or unreachable from the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Records a detached leaf; it never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op, value: Tensor, operands: &[Var]) -> Var {
        debug_assert!(
            !operands.iter().all(|v| self.value(*v).is_finite()) || value.is_finite(),
            "primitive produced non-finite output from finite operands"
        );
        let rg = operands.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(op, value, rg)
    }

    /// Generic entry point used by tooling and the gradient-check suites.
    pub fn apply(&mut self, kind: OpKind, operands: &[Var], attr: OpAttr) -> Result<Var> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Hadamard | OpKind::AddRow => Some(2),
            OpKind::ConcatCols => None,
            _ => Some(1),
        };
        if let Some(n) = arity {
            if operands.len() != n {
                return Err(Error::Contract(format!(
                    "{kind} expects {n} operand(s), got {}",
                    operands.len()
                )));
            }
        }
        let a = operands.first().copied();
        let a = || a.ok_or_else(|| Error::Contract(format!("{kind} needs an operand")));
        match (kind, attr) {
            (OpKind::MatMul, _) => self.matmul(operands[0], operands[1]),
            (OpKind::Add, _) => self.add(operands[0], operands[1]),
            (OpKind::Hadamard, _) => self.hadamard(operands[0], operands[1]),
            (OpKind::AddRow, _) => self.add_row(operands[0], operands[1]),
            (OpKind::Sigmoid, _) => Ok(self.sigmoid(a()?)),
            (OpKind::Tanh, _) => Ok(self.tanh(a()?)),
            (OpKind::Relu, _) => Ok(self.relu(a()?)),
            (OpKind::SoftmaxRows, _) => Ok(self.softmax_rows(a()?)),
            (OpKind::LogSoftmaxRows, _) => Ok(self.log_softmax_rows(a()?)),
            (OpKind::ConcatCols, _) => self.concat_cols(operands),
            (OpKind::Transpose, _) => Ok(self.transpose(a()?)),
            (OpKind::SumAll, _) => Ok(self.sum_all(a()?)),
            (OpKind::FrobeniusSq, _) => Ok(self.frobenius_sq(a()?)),
            (OpKind::Sqrt, _) => Ok(self.sqrt(a()?)),
            (OpKind::XLogX, _) => Ok(self.xlogx(a()?)),
            (OpKind::Scale, OpAttr::Scale(c)) => Ok(self.scale(a()?, c)),
            (OpKind::SliceCols, OpAttr::Cols(s, e)) => self.slice_cols(a()?, s, e),
            (OpKind::Reshape, OpAttr::Shape(shape)) => self.reshape(a()?, &shape),
            (kind, attr) => Err(Error::Contract(format!(
                "{kind} called with attribute {attr:?}"
            ))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let out = ta.matmul(tb);
        Ok(self.push_op(Op::MatMul(a, b), out, &[a, b]))
    }

    fn check_same(&self, kind: &str, a: Var, b: Var) -> Result<()> {
        if self.value(a).dims() != self.value(b).dims() {
            return Err(Error::dim(kind, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push_op(Op::Add(a, b), out, &[a, b]))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same("hadamard", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push_op(Op::Hadamard(a, b), out, &[a, b]))
    }

    /// `a + 1·row`: adds a `1 × c` row to every row of an `r × c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(Error::dim("add_row", ta.shape(), tr.shape()));
        }
        let c = ta.cols();
        let mut out = ta.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tr.data()[i % c];
        }
        Ok(self.push_op(Op::AddRow(a, row), out, &[a, row]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push_op(Op::Sigmoid(a), out, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push_op(Op::Tanh(a), out, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push_op(Op::Relu(a), out, &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push_op(Op::SoftmaxRows(a), out, &[a])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(c) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push_op(Op::LogSoftmaxRows(a), out, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(Error::dim(
                    "concat_cols",
                    self.shape(*first),
                    self.shape(*p),
                ));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        Ok(self.push_op(Op::ConcatCols(parts.to_vec()), out, parts))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start >= end || end > t.cols() {
            return Err(Error::dim("slice_cols", t.shape(), &[start, end]));
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let out = Tensor::matrix(rows, end - start, data)?;
        Ok(self.push_op(Op::SliceCols(a, start), out, &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push_op(Op::Transpose(a), out, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self
            .value(a)
            .reshaped(shape)
            .map_err(|_| Error::dim("reshape", self.shape(a), shape))?;
        Ok(self.push_op(Op::Reshape(a), out, &[a]))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push_op(Op::SumAll(a), out, &[a])
    }

    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|v| v * v).sum();
        self.push_op(Op::FrobeniusSq(a), Tensor::scalar(s), &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push_op(Op::Scale(a, c), out, &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0).sqrt());
        self.push_op(Op::Sqrt(a), out, &[a])
    }

    /// Elementwise `x·ln x`, extended by continuity to 0 at `x = 0`.
    pub fn xlogx(&mut self, a: Var) -> Var {
        let out = self.value(a).map(xlogx);
        self.push_op(Op::XLogX(a), out, &[a])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Contract("loss is not on this tape".into()))?;
        if node.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "loss must be scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(Error::Contract(
                "loss is detached from every trainable leaf".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(node.value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, contrib: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    acc(*a, reshape_like(g.matmul(&tb.transpose()), ta));
                }
                if self.requires_grad(*b) {
                    acc(*b, reshape_like(ta.transpose().matmul(g), tb));
                }
            }
            Op::Add(a, b) => {
                acc(*a, reshape_like(g.clone(), self.value(*a)));
                acc(*b, reshape_like(g.clone(), self.value(*b)));
            }
            Op::Hadamard(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, reshape_like(g.zip_map(tb, |gv, bv| gv * bv), ta));
                acc(*b, reshape_like(g.zip_map(ta, |gv, av| gv * av), tb));
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone());
                let c = g.cols();
                let mut col = vec![0.0; c];
                for (i, v) in g.data().iter().enumerate() {
                    col[i % c] += v;
                }
                let tr = self.value(*r);
                acc(*r, Tensor::new(tr.shape().to_vec(), col).expect("row shape"));
            }
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gv, s| gv * s * (1.0 - s))),
            Op::Tanh(a) => acc(*a, g.zip_map(y, |gv, t| gv * (1.0 - t * t))),
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(*a, g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::SoftmaxRows(a) => {
                let c = y.cols();
                let mut out = g.clone();
                for (orow, (grow, yrow)) in out
                    .data_mut()
                    .chunks_mut(c)
                    .zip(g.data().chunks(c).zip(y.data().chunks(c)))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o = yv * (gv - dot);
                    }
                }
                acc(*a, out);
            }
            Op::LogSoftmaxRows(a) => {
                let c = y.cols();
                let mut out = g.clone();
                for (orow, (grow, yrow)) in out
                    .data_mut()
                    .chunks_mut(c)
                    .zip(g.data().chunks(c).zip(y.data().chunks(c)))
                {
                    let gsum: f64 = grow.iter().sum();
                    for ((o, gv), yv) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o = gv - yv.exp() * gsum;
                    }
                }
                acc(*a, out);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for p in parts {
                    let tp = self.value(*p);
                    let pc = tp.cols();
                    let mut data = Vec::with_capacity(rows * pc);
                    for r in 0..rows {
                        data.extend_from_slice(&g.row(r)[offset..offset + pc]);
                    }
                    offset += pc;
                    acc(*p, Tensor::new(tp.shape().to_vec(), data).expect("part shape"));
                }
            }
            Op::SliceCols(a, start) => {
                let ta = self.value(*a);
                let mut out = Tensor::zeros(ta.shape());
                let cols = ta.cols();
                let gc = g.cols();
                for r in 0..g.rows() {
                    out.data_mut()[r * cols + start..r * cols + start + gc]
                        .copy_from_slice(g.row(r));
                }
                acc(*a, out);
            }
            Op::Transpose(a) => acc(*a, reshape_like(g.transpose(), self.value(*a))),
            Op::Reshape(a) => acc(*a, reshape_like(g.clone(), self.value(*a))),
            Op::SumAll(a) => {
                let ta = self.value(*a);
                acc(*a, Tensor::filled(ta.shape(), g.item()));
            }
            Op::FrobeniusSq(a) => {
                let gv = g.item();
                acc(*a, self.value(*a).map(|x| 2.0 * x * gv));
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
            Op::Sqrt(a) => acc(
                *a,
                g.zip_map(y, |gv, s| if s > 0.0 { gv / (2.0 * s) } else { 0.0 }),
            ),
            Op::XLogX(a) => {
                let x = self.value(*a);
                acc(
                    *a,
                    g.zip_map(x, |gv, xv| gv * (xv.max(f64::MIN_POSITIVE).ln() + 1.0)),
                );
            }
        }
    }
}

fn reshape_like(t: Tensor, like: &Tensor) -> Tensor {
    if t.shape() == like.shape() {
        t
    } else {
        t.reshaped(like.shape()).expect("gradient numel matches operand")
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let c = t.cols();
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(c) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}
