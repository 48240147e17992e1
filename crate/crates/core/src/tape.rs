//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] is an append-only arena of values. Every op appends its output
//! and remembers which entries it read, so the arena is topologically ordered
//! by construction and [`Tape::backward`] is a single reverse sweep. Nodes
//! whose inputs never required a gradient are skipped during the sweep.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind {
    /// `[m, k] x [k, n] -> [m, n]`
    MatMul,
    /// `[m, k] x [n, k]^T -> [m, n]`; the dense-layer product with `(out, in)` weights.
    MatMulNT,
    Add,
    /// `[m, n] + [n]` (or `[1, n]`), repeated over rows.
    BroadcastAdd,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
    Square,
    Sum,
    Mean,
    Log,
    /// Row-wise concatenation of 2-D operands with equal width.
    Concat,
    /// Mean binary cross-entropy of logits against a constant label.
    BceWithLogits(f64),
    /// Row-wise log-softmax of a 2-D operand.
    LogSoftmax,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::MatMulNT => "matmul_nt",
            OpKind::Add => "add",
            OpKind::BroadcastAdd => "broadcast_add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Neg => "neg",
            OpKind::Scale(_) => "scale",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::LeakyRelu(_) => "leaky_relu",
            OpKind::Square => "square",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Log => "log",
            OpKind::Concat => "concat",
            OpKind::BceWithLogits(_) => "bce_with_logits",
            OpKind::LogSoftmax => "log_softmax",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Option<OpKind>,
    inputs: Vec<usize>,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Its `requires_grad` flag decides whether gradients
    /// are collected for it.
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        value.grad = None;
        self.push(value, None, Vec::new())
    }

    pub fn constant(&mut self, value: &Tensor) -> Var {
        self.leaf(value.detached())
    }

    pub fn variable(&mut self, value: &Tensor) -> Var {
        self.leaf(value.detached().with_grad())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient left by the last [`Tape::backward`], if the node received one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Option<OpKind>, inputs: Vec<usize>) -> Var {
        self.nodes.push(Node { value, op, inputs });
        Var(self.nodes.len() - 1)
    }

    fn mismatch(&self, op: OpKind, inputs: &[Var]) -> Error {
        Error::ShapeMismatch {
            op: op.name(),
            shapes: inputs
                .iter()
                .map(|v| self.nodes[v.0].value.shape().to_vec())
                .collect(),
        }
    }

    /// Evaluates `op` on recorded inputs and records the result.
    pub fn apply(&mut self, op: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity_ok = match op {
            OpKind::MatMul
            | OpKind::MatMulNT
            | OpKind::Add
            | OpKind::BroadcastAdd
            | OpKind::Sub
            | OpKind::Mul => inputs.len() == 2,
            OpKind::Concat => !inputs.is_empty(),
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(self.mismatch(op, inputs));
        }
        let value = self.forward(op, inputs)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        let mut value = value;
        value.requires_grad = requires_grad;
        Ok(self.push(value, Some(op), inputs.iter().map(|v| v.0).collect()))
    }

    fn forward(&self, op: OpKind, inputs: &[Var]) -> Result<Tensor> {
        let a = &self.nodes[inputs[0].0].value;
        let unary = |f: &dyn Fn(f64) -> f64| {
            Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
        };
        match op {
            OpKind::MatMul | OpKind::MatMulNT => {
                let b = &self.nodes[inputs[1].0].value;
                if a.shape().len() != 2 || b.shape().len() != 2 {
                    return Err(self.mismatch(op, inputs));
                }
                let (m, k) = (a.shape()[0], a.shape()[1]);
                if op == OpKind::MatMul {
                    if b.shape()[0] != k {
                        return Err(self.mismatch(op, inputs));
                    }
                    let n = b.shape()[1];
                    let mut out = vec![0.0; m * n];
                    kernels::matmul_nn(a.data(), b.data(), &mut out, m, k, n);
                    Tensor::new(vec![m, n], out)
                } else {
                    if b.shape()[1] != k {
                        return Err(self.mismatch(op, inputs));
                    }
                    let n = b.shape()[0];
                    let mut out = vec![0.0; m * n];
                    kernels::matmul_nt(a.data(), b.data(), &mut out, m, k, n);
                    Tensor::new(vec![m, n], out)
                }
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let b = &self.nodes[inputs[1].0].value;
                if a.shape() != b.shape() {
                    return Err(self.mismatch(op, inputs));
                }
                let f: fn(f64, f64) -> f64 = match op {
                    OpKind::Add => |x, y| x + y,
                    OpKind::Sub => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(a.shape().to_vec(), data)
            }
            OpKind::BroadcastAdd => {
                let b = &self.nodes[inputs[1].0].value;
                let n = b.len();
                let row_ok = b.shape().len() == 1 || (b.shape().len() == 2 && b.shape()[0] == 1);
                if a.shape().len() != 2 || a.shape()[1] != n || !row_ok {
                    return Err(self.mismatch(op, inputs));
                }
                let mut data = a.data().to_vec();
                for row in data.chunks_exact_mut(n) {
                    for (x, &y) in row.iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
                Tensor::new(a.shape().to_vec(), data)
            }
            OpKind::Neg => unary(&|x| -x),
            OpKind::Scale(s) => unary(&|x| s * x),
            OpKind::Sigmoid => unary(&sigmoid),
            OpKind::Tanh => unary(&libm::tanh),
            OpKind::LeakyRelu(alpha) => unary(&|x| if x > 0.0 { x } else { alpha * x }),
            OpKind::Square => unary(&|x| x * x),
            OpKind::Sum => Ok(Tensor::scalar(a.data().iter().sum())),
            OpKind::Mean => Ok(Tensor::scalar(
                a.data().iter().sum::<f64>() / a.len() as f64,
            )),
            OpKind::Log => {
                if a.data().iter().any(|&x| !(x > 0.0)) {
                    return Err(Error::InvalidArgument(
                        "log of a non-positive or NaN entry".into(),
                    ));
                }
                unary(&libm::log)
            }
            OpKind::Concat => {
                let parts: Vec<&Tensor> =
                    inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                Tensor::vstack(&parts).map_err(|_| self.mismatch(op, inputs))
            }
            OpKind::BceWithLogits(label) => {
                let total: f64 = a.data().iter().map(|&l| bce_term(l, label)).sum();
                Ok(Tensor::scalar(total / a.len() as f64))
            }
            OpKind::LogSoftmax => {
                if a.shape().len() != 2 {
                    return Err(self.mismatch(op, inputs));
                }
                let c = a.shape()[1];
                let mut data = a.data().to_vec();
                for row in data.chunks_exact_mut(c) {
                    let lse = log_sum_exp(row);
                    for x in row.iter_mut() {
                        *x -= lse;
                    }
                }
                Tensor::new(a.shape().to_vec(), data)
            }
        }
    }

    /// Accumulates `d root / d node` into every node that requires a
    /// gradient. Gradients from earlier calls are discarded first.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Ok(());
        }
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        if !self.nodes[root.0].value.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Some(op) = node.op {
                let contributions = self.vjp(op, id, &g);
                for (input, contribution) in node.inputs.iter().zip(contributions) {
                    let Some(contribution) = contribution else { continue };
                    match &mut grads[*input] {
                        Some(acc) => {
                            for (a, c) in acc.iter_mut().zip(&contribution) {
                                *a += c;
                            }
                        }
                        slot @ None => *slot = Some(contribution),
                    }
                }
            }
            self.nodes[id].value.grad = Some(g);
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `id` for each of its inputs; `None`
    /// for inputs that do not need a gradient.
    fn vjp(&self, op: OpKind, id: usize, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let node = &self.nodes[id];
        let out = node.value.data();
        let input = |i: usize| &self.nodes[node.inputs[i]].value;
        let wants = |i: usize| input(i).requires_grad;
        let a = input(0);
        let map_a = |f: &dyn Fn(usize) -> f64| -> Vec<Option<Vec<f64>>> {
            vec![wants(0).then(|| (0..a.len()).map(f).collect())]
        };
        match op {
            OpKind::MatMul => {
                let b = input(1);
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let da = wants(0).then(|| {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_nt(g, b.data(), &mut da, m, n, k);
                    da
                });
                let db = wants(1).then(|| {
                    let mut db = vec![0.0; k * n];
                    kernels::matmul_tn(a.data(), g, &mut db, m, k, n);
                    db
                });
                vec![da, db]
            }
            OpKind::MatMulNT => {
                let b = input(1);
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[0]);
                let da = wants(0).then(|| {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_nn(g, b.data(), &mut da, m, n, k);
                    da
                });
                let db = wants(1).then(|| {
                    let mut db = vec![0.0; n * k];
                    kernels::matmul_tn(g, a.data(), &mut db, m, n, k);
                    db
                });
                vec![da, db]
            }
            OpKind::Add => vec![wants(0).then(|| g.to_vec()), wants(1).then(|| g.to_vec())],
            OpKind::Sub => vec![
                wants(0).then(|| g.to_vec()),
                wants(1).then(|| g.iter().map(|x| -x).collect()),
            ],
            OpKind::Mul => {
                let b = input(1);
                vec![
                    wants(0).then(|| g.iter().zip(b.data()).map(|(g, y)| g * y).collect()),
                    wants(1).then(|| g.iter().zip(a.data()).map(|(g, x)| g * x).collect()),
                ]
            }
            OpKind::BroadcastAdd => {
                let n = input(1).len();
                let db = wants(1).then(|| {
                    let mut db = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    db
                });
                vec![wants(0).then(|| g.to_vec()), db]
            }
            OpKind::Neg => map_a(&|i| -g[i]),
            OpKind::Scale(s) => map_a(&|i| s * g[i]),
            OpKind::Sigmoid => map_a(&|i| g[i] * out[i] * (1.0 - out[i])),
            OpKind::Tanh => map_a(&|i| g[i] * (1.0 - out[i] * out[i])),
            OpKind::LeakyRelu(alpha) => {
                map_a(&|i| if a.data()[i] > 0.0 { g[i] } else { alpha * g[i] })
            }
            OpKind::Square => map_a(&|i| 2.0 * a.data()[i] * g[i]),
            OpKind::Sum => map_a(&|_| g[0]),
            OpKind::Mean => {
                let scale = g[0] / a.len() as f64;
                map_a(&|_| scale)
            }
            OpKind::Log => map_a(&|i| g[i] / a.data()[i]),
            OpKind::Concat => {
                let mut offset = 0;
                node.inputs
                    .iter()
                    .map(|&input| {
                        let part = &self.nodes[input].value;
                        let slice = &g[offset..offset + part.len()];
                        offset += part.len();
                        part.requires_grad.then(|| slice.to_vec())
                    })
                    .collect()
            }
            OpKind::BceWithLogits(label) => {
                let scale = g[0] / a.len() as f64;
                map_a(&|i| scale * (sigmoid(a.data()[i]) - label))
            }
            OpKind::LogSoftmax => {
                let c = a.shape()[1];
                vec![wants(0).then(|| {
                    let mut da = vec![0.0; a.len()];
                    for ((d, gr), o) in da
                        .chunks_exact_mut(c)
                        .zip(g.chunks_exact(c))
                        .zip(out.chunks_exact(c))
                    {
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            d[j] = gr[j] - libm::exp(o[j]) * total;
                        }
                    }
                    da
                })]
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMulNT, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn broadcast_add(&mut self, a: Var, row: Var) -> Result<Var> {
        self.apply(OpKind::BroadcastAdd, &[a, row])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Neg, &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(OpKind::Scale(s), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Result<Var> {
        self.apply(OpKind::LeakyRelu(alpha), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Square, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Mean, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Log, &[a])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::Concat, parts)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::LogSoftmax, &[a])
    }

    /// Mean of squared elementwise differences.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.value(pred).shape() != self.value(target).shape() {
            return Err(Error::ShapeMismatch {
                op: "mse_loss",
                shapes: vec![
                    self.value(pred).shape().to_vec(),
                    self.value(target).shape().to_vec(),
                ],
            });
        }
        let diff = self.sub(pred, target)?;
        let sq = self.square(diff)?;
        self.mean(sq)
    }

    /// Mean binary cross-entropy of `logits` against a constant 0/1 label,
    /// evaluated as `max(l, 0) - l*y + log1p(exp(-|l|))`.
    pub fn bce_with_logits(&mut self, logits: Var, label: f64) -> Result<Var> {
        self.apply(OpKind::BceWithLogits(label), &[logits])
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn bce_term(logit: f64, label: f64) -> f64 {
    let relu = if logit > 0.0 { logit } else { 0.0 };
    relu - logit * label + libm::log1p(libm::exp(-libm::fabs(logit)))
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(row.iter().map(|&x| libm::exp(x - max)).sum::<f64>())
}

/// Row-major dense products. Each output row depends only on the matching
/// row of the left operand, so batched results equal per-sample results
/// bit for bit.
pub(crate) mod kernels {
    /// `out[m, n] += a[m, k] * b[k, n]`
    pub fn matmul_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
                if aip == 0.0 {
                    continue;
                }
                let b_row = &b[p * n..(p + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += aip * bv;
                }
            }
        }
    }

    /// `out[m, n] += a[m, k] * b[n, k]^T`
    pub fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let a_row = &a[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
            }
        }
    }

    /// `out[k, n] += a[m, k]^T * b[m, n]`
    pub fn matmul_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let b_row = &b[i * n..(i + 1) * n];
            for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
                if aip == 0.0 {
                    continue;
                }
                let out_row = &mut out[p * n..(p + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += aip * bv;
                }
            }
        }
    }

    pub fn dot(x: &[f64], y: &[f64]) -> f64 {
        let mut acc = [0.0f64; 4];
        let xc = x.chunks_exact(4);
        let yc = y.chunks_exact(4);
        let (xr, yr) = (xc.remainder(), yc.remainder());
        for (xs, ys) in xc.zip(yc) {
            acc[0] += xs[0] * ys[0];
            acc[1] += xs[1] * ys[1];
            acc[2] += xs[2] * ys[2];
            acc[3] += xs[3] * ys[3];
        }
        let mut total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for (a, b) in xr.iter().zip(yr) {
            total += a * b;
        }
        total
    }
}
