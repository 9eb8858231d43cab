//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only tape. Every operation on a [`Var`] computes
//! its value eagerly and, when any input requires a gradient, records the
//! operation so [`Graph::backward`] can replay the tape in reverse. Node ids
//! increase monotonically, so tape order is a topological order.

use std::cell::RefCell;

use crate::error::{Result, TensorError};
use crate::kernels::{self, Broadcast, MatMulDims};
use crate::special;
use crate::tensor::{numel, Tensor};

type NodeId = usize;

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Neg,
    Exp,
    Log,
    Sqrt,
    Rsqrt,
    Square,
    Softplus,
    Tanh,
    Sigmoid,
    Silu,
    Lgamma,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(Binary, NodeId, NodeId),
    Unary(Unary, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    MatMul(NodeId, NodeId),
    SwapAxes(NodeId, usize, usize),
    Reshape(NodeId),
    Concat(Vec<NodeId>, usize),
    Slice(NodeId, usize, usize),
    Softmax(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumLast(NodeId),
    MeanLast(NodeId),
    Rope(NodeId, RopeSpec),
}

#[derive(Debug, Clone, Copy)]
struct RopeSpec {
    offset: usize,
    base: f64,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Single-writer computation tape. One training step builds and consumes one graph.
#[derive(Default)]
pub struct Graph {
    tape: RefCell<Tape>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

/// Gradients of a scalar loss with respect to every leaf that requires one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if it is not a differentiable leaf.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut tape = self.tape.borrow_mut();
        let id = tape.nodes.len();
        // Only differentiable results keep their recipe.
        let op = if requires_grad { op } else { Op::Leaf };
        tape.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { graph: self, id }
    }

    fn value(&self, id: NodeId) -> Tensor {
        self.tape.borrow().nodes[id].value.clone()
    }

    fn requires_grad(&self, id: NodeId) -> bool {
        self.tape.borrow().nodes[id].requires_grad
    }

    fn record(&self, op: &'static str, value: Tensor, recipe: Op, inputs: &[NodeId]) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let rg = inputs.iter().any(|&i| self.requires_grad(i));
        Ok(self.push(value, recipe, rg))
    }

    /// Runs reverse-mode accumulation from a scalar `loss`.
    ///
    /// The graph is consumed: a second call returns [`TensorError::GraphConsumed`].
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let mut tape = self.tape.borrow_mut();
        if tape.consumed {
            return Err(TensorError::GraphConsumed);
        }
        let loss_shape = tape.nodes[loss.id].value.shape().to_vec();
        if numel(&loss_shape) != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        tape.consumed = true;
        let nodes = &tape.nodes;
        let mut acc: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        acc[loss.id] = Some(vec![1.0]);
        let mut out: Vec<Option<Tensor>> = vec![None; nodes.len()];

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = acc[id].take() else {
                if matches!(node.op, Op::Leaf) {
                    out[id] = Some(Tensor::zeros(node.value.shape().to_vec()));
                }
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                out[id] = Some(Tensor::from_parts(node.value.shape().to_vec(), grad));
                continue;
            }
            propagate(nodes, id, &grad, &mut acc);
        }
        // Leaves created after the loss still get an explicit zero gradient.
        for (id, node) in nodes.iter().enumerate().skip(loss.id + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                out[id] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads: out })
    }
}

fn slot<'a>(acc: &'a mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &'a mut Vec<f64> {
    acc[id].get_or_insert_with(|| vec![0.0; len])
}

fn propagate(nodes: &[Node], id: NodeId, grad: &[f64], acc: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let y = node.value.data();
    let wants = |i: NodeId| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf => {}
        &Op::Binary(kind, a, b) => {
            let out_shape = node.value.shape();
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let ba = Broadcast::new(out_shape, va.shape());
            let bb = Broadcast::new(out_shape, vb.shape());
            let (da, db) = (va.data(), vb.data());
            let n = grad.len();
            if wants(a) {
                let ga = slot(acc, a, va.len());
                match kind {
                    Binary::Add | Binary::Sub => {
                        kernels::for_each_pair(n, &ba, &bb, |i, ia, _| ga[ia] += grad[i])
                    }
                    Binary::Mul => {
                        kernels::for_each_pair(n, &ba, &bb, |i, ia, ib| ga[ia] += grad[i] * db[ib])
                    }
                    Binary::Div => {
                        kernels::for_each_pair(n, &ba, &bb, |i, ia, ib| ga[ia] += grad[i] / db[ib])
                    }
                }
            }
            if wants(b) {
                let gb = slot(acc, b, vb.len());
                match kind {
                    Binary::Add => kernels::for_each_pair(n, &ba, &bb, |i, _, ib| gb[ib] += grad[i]),
                    Binary::Sub => kernels::for_each_pair(n, &ba, &bb, |i, _, ib| gb[ib] -= grad[i]),
                    Binary::Mul => {
                        kernels::for_each_pair(n, &ba, &bb, |i, ia, ib| gb[ib] += grad[i] * da[ia])
                    }
                    Binary::Div => kernels::for_each_pair(n, &ba, &bb, |i, ia, ib| {
                        gb[ib] += -grad[i] * da[ia] / (db[ib] * db[ib])
                    }),
                }
            }
        }
        &Op::Unary(kind, a) => {
            if !wants(a) {
                return;
            }
            let x = nodes[a].value.data();
            let ga = slot(acc, a, x.len());
            for i in 0..grad.len() {
                let (xi, yi) = (x[i], y[i]);
                let d = match kind {
                    Unary::Neg => -1.0,
                    Unary::Exp => yi,
                    Unary::Log => 1.0 / xi,
                    Unary::Sqrt => 0.5 / yi,
                    Unary::Rsqrt => -0.5 * yi * yi * yi,
                    Unary::Square => 2.0 * xi,
                    Unary::Softplus => sigmoid(xi),
                    Unary::Tanh => 1.0 - yi * yi,
                    Unary::Sigmoid => yi * (1.0 - yi),
                    Unary::Silu => {
                        let s = sigmoid(xi);
                        s + xi * s * (1.0 - s)
                    }
                    Unary::Lgamma => special::digamma(xi),
                };
                ga[i] += grad[i] * d;
            }
        }
        &Op::AddScalar(a) => {
            if wants(a) {
                let ga = slot(acc, a, grad.len());
                ga.iter_mut().zip(grad).for_each(|(s, g)| *s += g);
            }
        }
        &Op::MulScalar(a, c) => {
            if wants(a) {
                let ga = slot(acc, a, grad.len());
                ga.iter_mut().zip(grad).for_each(|(s, g)| *s += c * g);
            }
        }
        &Op::MatMul(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            let dims = kernels::matmul_dims(va.shape(), vb.shape()).expect("validated in forward");
            let (ga, gb) =
                kernels::matmul_backward(va.data(), vb.data(), grad, &dims, wants(a), wants(b));
            if let Some(ga) = ga {
                add_into(slot(acc, a, va.len()), &ga);
            }
            if let Some(gb) = gb {
                add_into(slot(acc, b, vb.len()), &gb);
            }
        }
        &Op::SwapAxes(a, i, j) => {
            if wants(a) {
                let (_, back) = kernels::swap_axes(grad, node.value.shape(), i, j);
                add_into(slot(acc, a, back.len()), &back);
            }
        }
        &Op::Reshape(a) => {
            if wants(a) {
                add_into(slot(acc, a, grad.len()), grad);
            }
        }
        Op::Concat(parts, axis) => {
            let (outer, total, inner) = kernels::split_at_axis(node.value.shape(), *axis);
            let mut start = 0;
            for &p in parts {
                let ext = nodes[p].value.shape()[*axis];
                if wants(p) {
                    let gp = slot(acc, p, outer * ext * inner);
                    for o in 0..outer {
                        let src = &grad[(o * total + start) * inner..(o * total + start + ext) * inner];
                        add_into(&mut gp[o * ext * inner..(o + 1) * ext * inner], src);
                    }
                }
                start += ext;
            }
        }
        &Op::Slice(a, axis, start) => {
            if wants(a) {
                let src_shape = nodes[a].value.shape();
                let (outer, total, inner) = kernels::split_at_axis(src_shape, axis);
                let len = node.value.shape()[axis];
                let ga = slot(acc, a, outer * total * inner);
                for o in 0..outer {
                    let dst = &mut ga[(o * total + start) * inner..(o * total + start + len) * inner];
                    add_into(dst, &grad[o * len * inner..(o + 1) * len * inner]);
                }
            }
        }
        &Op::Softmax(a) => {
            if wants(a) {
                let n = *node.value.shape().last().unwrap_or(&1);
                let ga = slot(acc, a, grad.len());
                for r in 0..grad.len() / n {
                    let (yr, gr) = (&y[r * n..(r + 1) * n], &grad[r * n..(r + 1) * n]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        ga[r * n + c] += yr[c] * (gr[c] - dot);
                    }
                }
            }
        }
        &Op::Sum(a) | &Op::Mean(a) => {
            if wants(a) {
                let len = nodes[a].value.len();
                let g = if matches!(node.op, Op::Mean(_)) {
                    grad[0] / len as f64
                } else {
                    grad[0]
                };
                slot(acc, a, len).iter_mut().for_each(|s| *s += g);
            }
        }
        &Op::SumLast(a) | &Op::MeanLast(a) => {
            if wants(a) {
                let src = &nodes[a].value;
                let n = *src.shape().last().unwrap_or(&1);
                let scale = if matches!(node.op, Op::MeanLast(_)) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                let ga = slot(acc, a, src.len());
                for (r, &g) in grad.iter().enumerate() {
                    ga[r * n..(r + 1) * n].iter_mut().for_each(|s| *s += g * scale);
                }
            }
        }
        &Op::Rope(a, spec) => {
            if wants(a) {
                let back = rope_rotate(grad, node.value.shape(), spec, -1.0);
                add_into(slot(acc, a, back.len()), &back);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Rotates consecutive pairs of the last axis of `[..., T, d]` by `sign · p · ω_i`
/// with `p = offset + t` and `ω_i = base^(-2i/d)`.
fn rope_rotate(data: &[f64], shape: &[usize], spec: RopeSpec, sign: f64) -> Vec<f64> {
    let d = shape[shape.len() - 1];
    let t_len = shape[shape.len() - 2];
    let half = d / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| spec.base.powf(-2.0 * i as f64 / d as f64))
        .collect();
    let mut out = vec![0.0; data.len()];
    for (row, (src, dst)) in data.chunks_exact(d).zip(out.chunks_exact_mut(d)).enumerate() {
        let pos = (spec.offset + row % t_len) as f64;
        for (i, &w) in freqs.iter().enumerate() {
            let (sin, cos) = (sign * pos * w).sin_cos();
            let (x0, x1) = (src[2 * i], src[2 * i + 1]);
            dst[2 * i] = x0 * cos - x1 * sin;
            dst[2 * i + 1] = x0 * sin + x1 * cos;
        }
    }
    out
}

impl<'g> Var<'g> {
    pub fn value(&self) -> Tensor {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.tape.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    fn binary(self, other: Var<'g>, kind: Binary, name: &'static str) -> Result<Var<'g>> {
        let (va, vb) = (self.value(), other.value());
        let out_shape = kernels::broadcast_shape(name, va.shape(), vb.shape())?;
        let ba = Broadcast::new(&out_shape, va.shape());
        let bb = Broadcast::new(&out_shape, vb.shape());
        let (da, db) = (va.data(), vb.data());
        let n = numel(&out_shape);
        let mut data = vec![0.0; n];
        fn fill(out: &mut [f64], ba: &Broadcast, bb: &Broadcast, da: &[f64], db: &[f64], f: impl Fn(f64, f64) -> f64) {
            kernels::for_each_pair(out.len(), ba, bb, |i, ia, ib| out[i] = f(da[ia], db[ib]));
        }
        match kind {
            Binary::Add => fill(&mut data, &ba, &bb, da, db, |x, y| x + y),
            Binary::Sub => fill(&mut data, &ba, &bb, da, db, |x, y| x - y),
            Binary::Mul => fill(&mut data, &ba, &bb, da, db, |x, y| x * y),
            Binary::Div => fill(&mut data, &ba, &bb, da, db, |x, y| x / y),
        }
        self.graph.record(
            name,
            Tensor::from_parts(out_shape, data),
            Op::Binary(kind, self.id, other.id),
            &[self.id, other.id],
        )
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Binary::Add, "add")
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Binary::Sub, "sub")
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Binary::Mul, "mul")
    }

    pub fn div(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Binary::Div, "div")
    }

    fn unary(self, kind: Unary, name: &'static str) -> Result<Var<'g>> {
        let v = self.value();
        let domain_ok = |x: f64| match kind {
            Unary::Log | Unary::Rsqrt | Unary::Lgamma => x > 0.0,
            Unary::Sqrt => x >= 0.0,
            _ => true,
        };
        if let Some(&bad) = v.data().iter().find(|&&x| !domain_ok(x)) {
            return Err(TensorError::Domain { op: name, value: bad });
        }
        let out = v.map(|x| match kind {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Rsqrt => 1.0 / x.sqrt(),
            Unary::Square => x * x,
            Unary::Softplus => softplus(x),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Silu => x * sigmoid(x),
            Unary::Lgamma => special::lgamma(x),
        });
        self.graph
            .record(name, out, Op::Unary(kind, self.id), &[self.id])
    }

    pub fn neg(self) -> Result<Var<'g>> {
        self.unary(Unary::Neg, "neg")
    }
    pub fn exp(self) -> Result<Var<'g>> {
        self.unary(Unary::Exp, "exp")
    }
    pub fn log(self) -> Result<Var<'g>> {
        self.unary(Unary::Log, "log")
    }
    pub fn sqrt(self) -> Result<Var<'g>> {
        self.unary(Unary::Sqrt, "sqrt")
    }
    pub fn rsqrt(self) -> Result<Var<'g>> {
        self.unary(Unary::Rsqrt, "rsqrt")
    }
    pub fn square(self) -> Result<Var<'g>> {
        self.unary(Unary::Square, "square")
    }
    pub fn softplus(self) -> Result<Var<'g>> {
        self.unary(Unary::Softplus, "softplus")
    }
    pub fn tanh(self) -> Result<Var<'g>> {
        self.unary(Unary::Tanh, "tanh")
    }
    pub fn sigmoid(self) -> Result<Var<'g>> {
        self.unary(Unary::Sigmoid, "sigmoid")
    }
    /// `x · sigmoid(x)`.
    pub fn silu(self) -> Result<Var<'g>> {
        self.unary(Unary::Silu, "silu")
    }
    /// `ln Γ(x)`; errors on non-positive input.
    pub fn lgamma(self) -> Result<Var<'g>> {
        self.unary(Unary::Lgamma, "lgamma")
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'g>> {
        let out = self.value().map(|x| x + c);
        self.graph
            .record("add_scalar", out, Op::AddScalar(self.id), &[self.id])
    }

    pub fn mul_scalar(self, c: f64) -> Result<Var<'g>> {
        let out = self.value().map(|x| x * c);
        self.graph
            .record("mul_scalar", out, Op::MulScalar(self.id, c), &[self.id])
    }

    /// Matrix product over the last two axes; the right operand is either a
    /// single matrix or has the same leading batch axes as `self`.
    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let (va, vb) = (self.value(), other.value());
        let dims: MatMulDims = kernels::matmul_dims(va.shape(), vb.shape())?;
        let data = kernels::matmul(va.data(), vb.data(), &dims);
        self.graph.record(
            "matmul",
            Tensor::from_parts(dims.out_shape, data),
            Op::MatMul(self.id, other.id),
            &[self.id, other.id],
        )
    }

    /// Exchanges axes `i` and `j`.
    pub fn transpose(self, i: usize, j: usize) -> Result<Var<'g>> {
        let v = self.value();
        if i >= v.ndim() || j >= v.ndim() {
            return Err(TensorError::InvalidArgument {
                op: "transpose",
                msg: format!("axes ({i}, {j}) out of range for shape {:?}", v.shape()),
            });
        }
        let (shape, data) = kernels::swap_axes(v.data(), v.shape(), i, j);
        self.graph.record(
            "transpose",
            Tensor::from_parts(shape, data),
            Op::SwapAxes(self.id, i, j),
            &[self.id],
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.value().reshaped(shape.to_vec())?;
        self.graph
            .record("reshape", v, Op::Reshape(self.id), &[self.id])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let graph = first.graph;
        let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {base:?}"),
            });
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let (outer, _, inner) = kernels::split_at_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for v in &values {
                let ext = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * ext..(o + 1) * ext]);
            }
        }
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        graph.record(
            "concat",
            Tensor::from_parts(out_shape, data),
            Op::Concat(ids.clone(), axis),
            &ids,
        )
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        let v = self.value();
        if axis >= v.ndim() || len == 0 || start + len > v.shape()[axis] {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                msg: format!(
                    "range {start}..{} on axis {axis} of shape {:?}",
                    start + len,
                    v.shape()
                ),
            });
        }
        let (outer, total, inner) = kernels::split_at_axis(v.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&v.data()[(o * total + start) * inner..(o * total + start + len) * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = len;
        self.graph.record(
            "slice",
            Tensor::from_parts(shape, data),
            Op::Slice(self.id, axis, start),
            &[self.id],
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'g>> {
        let v = self.value();
        let n = *v.shape().last().ok_or_else(|| TensorError::InvalidArgument {
            op: "softmax",
            msg: "scalar input".into(),
        })?;
        let mut data = v.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        self.graph.record(
            "softmax",
            Tensor::from_parts(v.shape().to_vec(), data),
            Op::Softmax(self.id),
            &[self.id],
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Result<Var<'g>> {
        let s = self.value().data().iter().sum();
        self.graph
            .record("sum", Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Result<Var<'g>> {
        let v = self.value();
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.graph
            .record("mean", Tensor::scalar(s), Op::Mean(self.id), &[self.id])
    }

    fn reduce_last(self, mean: bool) -> Result<Var<'g>> {
        let v = self.value();
        let name = if mean { "mean_last" } else { "sum_last" };
        let n = *v.shape().last().ok_or_else(|| TensorError::InvalidArgument {
            op: name,
            msg: "scalar input".into(),
        })?;
        let data: Vec<f64> = v
            .data()
            .chunks_exact(n)
            .map(|r| {
                let s: f64 = r.iter().sum();
                if mean {
                    s / n as f64
                } else {
                    s
                }
            })
            .collect();
        let mut shape = v.shape().to_vec();
        *shape.last_mut().expect("non-scalar") = 1;
        let op = if mean {
            Op::MeanLast(self.id)
        } else {
            Op::SumLast(self.id)
        };
        self.graph
            .record(name, Tensor::from_parts(shape, data), op, &[self.id])
    }

    /// Sum over the last axis, keeping it with extent 1.
    pub fn sum_last(self) -> Result<Var<'g>> {
        self.reduce_last(false)
    }

    /// Mean over the last axis, keeping it with extent 1.
    pub fn mean_last(self) -> Result<Var<'g>> {
        self.reduce_last(true)
    }

    /// Rotary position encoding of a `[..., T, d]` tensor: row `t` is rotated
    /// as position `offset + t`.
    pub fn rope(self, offset: usize, base: f64) -> Result<Var<'g>> {
        let v = self.value();
        if v.ndim() < 2 || v.shape()[v.ndim() - 1] % 2 != 0 {
            return Err(TensorError::InvalidArgument {
                op: "rope",
                msg: format!("needs [.., T, even d], got {:?}", v.shape()),
            });
        }
        let spec = RopeSpec { offset, base };
        let data = rope_rotate(v.data(), v.shape(), spec, 1.0);
        self.graph.record(
            "rope",
            Tensor::from_parts(v.shape().to_vec(), data),
            Op::Rope(self.id, spec),
            &[self.id],
        )
    }
}

/// Rotary encoding of a single `d`-vector at `position`; shared with cached decoding.
pub fn rope_vector(x: &[f64], position: usize, base: f64) -> Vec<f64> {
    rope_rotate(
        x,
        &[1, x.len()],
        RopeSpec {
            offset: position,
            base,
        },
        1.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_gradient() {
        let g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = x.square().unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn softplus_gradient_at_zero() {
        let g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = x.softplus().unwrap();
        assert!((y.value().item() - 2f64.ln()).abs() < 1e-15);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 0.5);
    }

    #[test]
    fn softmax_uniform() {
        let g = Graph::new();
        let x = g.constant(t(&[3], &[1.0, 1.0, 1.0]));
        let y = x.softmax().unwrap().value();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn lgamma_forward_and_domain() {
        let g = Graph::new();
        let x = g.constant(t(&[2], &[5.0, 0.5]));
        let y = x.lgamma().unwrap().value();
        assert!((y.data()[0] - 24f64.ln()).abs() < 1e-12);
        assert!((y.data()[1] - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-10);
        let bad = g.constant(t(&[2], &[1.0, -0.5]));
        assert!(matches!(
            bad.lgamma(),
            Err(TensorError::Domain { op: "lgamma", .. })
        ));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = x.mul(x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.backward(y).err(), Some(TensorError::GraphConsumed));
    }

    #[test]
    fn backward_needs_scalar() {
        let g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let y = x.square().unwrap();
        assert!(matches!(g.backward(y), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros([3, 4]));
        let b = g.constant(Tensor::zeros([3, 2]));
        let msg = a.matmul(b).unwrap_err().to_string();
        assert!(msg.contains("matmul") && msg.contains("[3, 4]") && msg.contains("[3, 2]"));
        let msg = a.add(b).unwrap_err().to_string();
        assert!(msg.contains("add"));
    }

    #[test]
    fn non_finite_results_are_rejected() {
        let g = Graph::new();
        let x = g.constant(Tensor::scalar(1000.0));
        assert_eq!(x.exp().err(), Some(TensorError::NonFinite { op: "exp" }));
    }

    #[test]
    fn constants_do_not_record() {
        let g = Graph::new();
        let a = g.constant(Tensor::scalar(1.0));
        let b = a.exp().unwrap();
        assert!(!b.requires_grad());
        let p = g.param(Tensor::scalar(1.0));
        assert!(b.add(p).unwrap().requires_grad());
    }

    #[test]
    fn broadcast_add_gradient_sums_over_leading_axes() {
        let g = Graph::new();
        let a = g.param(Tensor::zeros([4, 3]));
        let b = g.param(Tensor::zeros([3]));
        let y = a.add(b).unwrap().sum().unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[4.0, 4.0, 4.0]);
        assert_eq!(grads.get(a).unwrap().data(), &[1.0; 12]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let g = Graph::new();
        let a = g.param(Tensor::scalar(1.0));
        let b = g.param(t(&[2], &[1.0, 2.0]));
        let y = a.square().unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn rope_position_zero_is_identity() {
        let g = Graph::new();
        let x = g.constant(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(x.rope(0, 10_000.0).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(g.constant(Tensor::zeros([2, 3])).rope(0, 10_000.0).is_err());
    }
}
