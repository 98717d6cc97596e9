//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes in execution
//! order, which is already a topological order. [`Graph::backward`] walks the
//! tape once in reverse and accumulates vector-Jacobian products into the
//! inputs of each visited node. Nodes that do not depend on a
//! `requires_grad` leaf are never visited.

use crate::error::{Error, Result};
use crate::scalar::{Scalar, LOG_FLOOR};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds understood by the tape.
#[derive(Clone, Debug)]
pub enum Op<S> {
    Leaf,
    /// `[m, k] x [k, n] -> [m, n]`
    MatMul,
    /// 2-D transpose.
    Transpose,
    /// Elementwise add; the right operand may broadcast over leading axes of the left.
    Add,
    /// Elementwise product of equally shaped tensors.
    Mul,
    Scale(S),
    Sigmoid,
    Tanh,
    Exp,
    /// Natural log; non-positive inputs are a domain error.
    Log,
    /// Natural log floored at [`LOG_FLOOR`]; floored entries are counted and pass no gradient.
    ClampedLog,
    /// Softmax over the last axis.
    Softmax,
    /// Concatenation along the last axis.
    Concat,
    /// Max over axis 0. With `lengths`, entry `(t, b, ..)` participates only when `t < lengths[b]`.
    MaxAxis0 { lengths: Option<Vec<usize>> },
    /// Global L2 norm, scalar output.
    L2Norm,
    /// Sum of all entries, scalar output.
    Sum,
    /// Elementwise multiply by a fixed mask (dropout).
    ApplyMask(Vec<S>),
    /// `mask[i] ? a[i] : b[i]`
    Select(Vec<bool>),
    /// Index `i` along axis 0, dropping that axis.
    SliceAxis0(usize),
    /// Stack equally shaped inputs along a new axis 0.
    Stack,
    /// Row lookup into a 2-D table; output shape is `index_shape + [cols]`.
    Gather {
        indices: Vec<usize>,
        index_shape: Vec<usize>,
    },
    /// `out[b] = x[b, indices[b]]` for a 2-D input.
    Pick(Vec<usize>),
}

impl<S> Op<S> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::ClampedLog => "clamped_log",
            Op::Softmax => "softmax",
            Op::Concat => "concat",
            Op::MaxAxis0 { .. } => "max_axis0",
            Op::L2Norm => "l2_norm",
            Op::Sum => "sum",
            Op::ApplyMask(_) => "apply_mask",
            Op::Select(_) => "select",
            Op::SliceAxis0(_) => "slice_axis0",
            Op::Stack => "stack",
            Op::Gather { .. } => "gather",
            Op::Pick(_) => "pick",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<S> {
    op: Op<S>,
    inputs: Vec<NodeId>,
    value: Tensor<S>,
    requires_grad: bool,
    /// Argmax routing for `MaxAxis0`.
    argmax: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    clamp_events: usize,
}

/// Gradients produced by one backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the root with respect to `id`; zero when `id` is unreachable.
    pub fn wrt(&self, id: NodeId) -> Tensor<S> {
        let shape = &self.shapes[id.0];
        match &self.grads[id.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn get(&self, id: NodeId) -> Option<&[S]> {
        self.grads[id.0].as_deref()
    }
}

fn check_same(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            clamp_events: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of entries floored by `ClampedLog` so far.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn argmax(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].argmax
    }

    /// Leaf that participates in differentiation.
    pub fn param(&mut self, t: Tensor<S>) -> NodeId {
        self.leaf(t, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor<S>) -> NodeId {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, mut t: Tensor<S>, requires_grad: bool) -> NodeId {
        t.requires_grad = requires_grad;
        t.grad = None;
        self.push(Op::Leaf, vec![], t, requires_grad, Vec::new())
    }

    fn push(
        &mut self,
        op: Op<S>,
        inputs: Vec<NodeId>,
        value: Tensor<S>,
        requires_grad: bool,
        argmax: Vec<usize>,
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
            argmax,
        });
        id
    }

    /// Evaluates `op` on `inputs` and appends the result to the tape.
    pub fn apply(&mut self, op: Op<S>, inputs: &[NodeId]) -> Result<NodeId> {
        let arity = match &op {
            Op::Leaf => return Err(Error::Contract("leaf nodes are created with param/constant".into())),
            Op::MatMul | Op::Add | Op::Mul | Op::Select(_) => Some(2),
            Op::Concat | Op::Stack => None,
            _ => Some(1),
        };
        if let Some(n) = arity {
            if inputs.len() != n {
                return Err(Error::Contract(format!(
                    "{} takes {} inputs, got {}",
                    op.name(),
                    n,
                    inputs.len()
                )));
            }
        } else if inputs.is_empty() {
            return Err(Error::Contract(format!("{} needs at least one input", op.name())));
        }

        let (value, argmax) = self.eval(&op, inputs)?;
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push(op, inputs.to_vec(), value, requires_grad, argmax))
    }

    fn eval(&mut self, op: &Op<S>, inputs: &[NodeId]) -> Result<(Tensor<S>, Vec<usize>)> {
        let x = &self.nodes[inputs[0].0].value;
        let out = match op {
            Op::Leaf => unreachable!(),
            Op::MatMul => {
                let b = &self.nodes[inputs[1].0].value;
                let (xs, bs) = (x.shape(), b.shape());
                if xs.len() != 2 || bs.len() != 2 || xs[1] != bs[0] {
                    return Err(Error::shape("matmul", xs, bs));
                }
                let (m, k, n) = (xs[0], xs[1], bs[1]);
                let mut out = vec![S::zero(); m * n];
                matmul_into(x.data(), b.data(), &mut out, m, k, n);
                Tensor::new(vec![m, n], out)?
            }
            Op::Transpose => {
                let s = x.shape();
                if s.len() != 2 {
                    return Err(Error::shape("transpose", s, &[]));
                }
                let (r, c) = (s[0], s[1]);
                let d = x.data();
                let mut out = vec![S::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = d[i * c + j];
                    }
                }
                Tensor::new(vec![c, r], out)?
            }
            Op::Add => {
                let b = &self.nodes[inputs[1].0].value;
                if x.shape() == b.shape() {
                    x.zip_map(b, |p, q| p + q)?
                } else if is_suffix(b.shape(), x.shape()) && !b.is_empty() {
                    let bd = b.data();
                    let blen = bd.len();
                    let data = x
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| v + bd[i % blen])
                        .collect();
                    Tensor::new(x.shape().to_vec(), data)?
                } else {
                    return Err(Error::shape("add", x.shape(), b.shape()));
                }
            }
            Op::Mul => {
                let b = &self.nodes[inputs[1].0].value;
                check_same("mul", x, b)?;
                x.zip_map(b, |p, q| p * q)?
            }
            Op::Scale(c) => {
                let c = *c;
                x.map(|v| v * c)
            }
            Op::Sigmoid => x.map(sigmoid),
            Op::Tanh => x.map(|v| v.tanh()),
            Op::Exp => x.map(|v| v.exp()),
            Op::Log => {
                if let Some(bad) = x.data().iter().find(|&&v| !(v > S::zero())) {
                    return Err(Error::Domain(format!("log of non-positive value {bad}")));
                }
                x.map(|v| v.ln())
            }
            Op::ClampedLog => {
                let floor = S::lit(LOG_FLOOR);
                let mut clamped = 0;
                let t = x.map(|v| {
                    let l = if v > S::zero() { v.ln() } else { S::neg_infinity() };
                    if l < floor {
                        floor
                    } else {
                        l
                    }
                });
                for &v in x.data() {
                    if !(v > S::zero()) || v.ln() < floor {
                        clamped += 1;
                    }
                }
                if clamped > 0 {
                    log::warn!("log clamped at {LOG_FLOOR} for {clamped} entries");
                }
                self.clamp_events += clamped;
                t
            }
            Op::Softmax => {
                let s = x.shape();
                let k = *s.last().ok_or_else(|| Error::shape("softmax", s, &[]))?;
                let mut out = x.data().to_vec();
                if k > 0 {
                    for row in out.chunks_mut(k) {
                        softmax_in_place(row);
                    }
                }
                Tensor::new(s.to_vec(), out)?
            }
            Op::Concat => {
                let first = x.shape();
                if first.is_empty() {
                    return Err(Error::shape("concat", first, &[]));
                }
                let lead = &first[..first.len() - 1];
                let rows: usize = lead.iter().product();
                let mut widths = Vec::with_capacity(inputs.len());
                for id in inputs {
                    let s = self.nodes[id.0].value.shape();
                    if s.len() != first.len() || &s[..s.len() - 1] != lead {
                        return Err(Error::shape("concat", first, s));
                    }
                    widths.push(s[s.len() - 1]);
                }
                let total: usize = widths.iter().sum();
                let mut out = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for (id, &w) in inputs.iter().zip(&widths) {
                        out.extend_from_slice(&self.nodes[id.0].value.data()[r * w..(r + 1) * w]);
                    }
                }
                let mut shape = lead.to_vec();
                shape.push(total);
                Tensor::new(shape, out)?
            }
            Op::MaxAxis0 { lengths } => return max_axis0(x, lengths.as_deref()),
            Op::L2Norm => Tensor::scalar(x.norm_l2()),
            Op::Sum => Tensor::scalar(x.data().iter().copied().sum()),
            Op::ApplyMask(mask) => {
                if mask.len() != x.len() {
                    return Err(Error::shape("apply_mask", x.shape(), &[mask.len()]));
                }
                let data = x.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            Op::Select(mask) => {
                let b = &self.nodes[inputs[1].0].value;
                check_same("select", x, b)?;
                if mask.len() != x.len() {
                    return Err(Error::shape("select", x.shape(), &[mask.len()]));
                }
                let data = x
                    .data()
                    .iter()
                    .zip(b.data())
                    .zip(mask)
                    .map(|((&p, &q), &m)| if m { p } else { q })
                    .collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            Op::SliceAxis0(i) => {
                let s = x.shape();
                if s.is_empty() || *i >= s[0] {
                    return Err(Error::shape("slice_axis0", s, &[*i]));
                }
                let block: usize = s[1..].iter().product();
                Tensor::new(s[1..].to_vec(), x.data()[i * block..(i + 1) * block].to_vec())?
            }
            Op::Stack => {
                let s = x.shape().to_vec();
                let mut out = Vec::with_capacity(x.len() * inputs.len());
                for id in inputs {
                    let v = &self.nodes[id.0].value;
                    if v.shape() != s.as_slice() {
                        return Err(Error::shape("stack", &s, v.shape()));
                    }
                    out.extend_from_slice(v.data());
                }
                let mut shape = vec![inputs.len()];
                shape.extend_from_slice(&s);
                Tensor::new(shape, out)?
            }
            Op::Gather {
                indices,
                index_shape,
            } => {
                let s = x.shape();
                if s.len() != 2 || index_shape.iter().product::<usize>() != indices.len() {
                    return Err(Error::shape("gather", s, index_shape));
                }
                let (rows, cols) = (s[0], s[1]);
                let mut out = Vec::with_capacity(indices.len() * cols);
                for &ix in indices {
                    if ix >= rows {
                        return Err(Error::shape("gather", s, &[ix]));
                    }
                    out.extend_from_slice(x.row(ix));
                }
                let mut shape = index_shape.clone();
                shape.push(cols);
                Tensor::new(shape, out)?
            }
            Op::Pick(indices) => {
                let s = x.shape();
                if s.len() != 2 || s[0] != indices.len() {
                    return Err(Error::shape("pick", s, &[indices.len()]));
                }
                let mut out = Vec::with_capacity(indices.len());
                for (b, &k) in indices.iter().enumerate() {
                    if k >= s[1] {
                        return Err(Error::shape("pick", s, &[b, k]));
                    }
                    out.push(x.data()[b * s[1] + k]);
                }
                Tensor::from_vec(out)
            }
        };
        Ok((out, Vec::new()))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<S>> {
        let rv = &self.nodes[root.0].value;
        if rv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![S::one()]);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        shapes.truncate(self.nodes.len());
        grads.resize(self.nodes.len(), None);
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { shapes, grads })
    }

    fn propagate(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let inputs = &node.inputs;
        let out = &node.value;
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let wants = |i: usize| self.nodes[inputs[i].0].requires_grad;

        // Accumulates into the gradient buffer of input `i`, allocating zeros on first touch.
        fn buf<S: Scalar>(
            grads: &mut [Option<Vec<S>>],
            id: NodeId,
            len: usize,
        ) -> &mut Vec<S> {
            grads[id.0].get_or_insert_with(|| vec![S::zero(); len])
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul => {
                let (a, b) = (val(0), val(1));
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                if wants(0) {
                    // dA = G * B^T
                    let ga = buf(grads, inputs[0], m * k);
                    let bd = b.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            let mut acc = S::zero();
                            for j in 0..n {
                                acc += grow[j] * brow[j];
                            }
                            ga[i * k + p] += acc;
                        }
                    }
                }
                if wants(1) {
                    // dB = A^T * G
                    let gb = buf(grads, inputs[1], k * n);
                    let ad = a.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == S::zero() {
                                continue;
                            }
                            let dst = &mut gb[p * n..(p + 1) * n];
                            for j in 0..n {
                                dst[j] += aip * grow[j];
                            }
                        }
                    }
                }
            }
            Op::Transpose => {
                if wants(0) {
                    let s = val(0).shape();
                    let (r, c) = (s[0], s[1]);
                    let gx = buf(grads, inputs[0], r * c);
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Add => {
                if wants(0) {
                    let gx = buf(grads, inputs[0], g.len());
                    gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
                }
                if wants(1) {
                    let blen = val(1).len();
                    let gb = buf(grads, inputs[1], blen);
                    for (i, &v) in g.iter().enumerate() {
                        gb[i % blen] += v;
                    }
                }
            }
            Op::Mul => {
                if wants(0) {
                    let b = val(1).data();
                    let gx = buf(grads, inputs[0], g.len());
                    for i in 0..g.len() {
                        gx[i] += g[i] * b[i];
                    }
                }
                if wants(1) {
                    let a = val(0).data();
                    let gb = buf(grads, inputs[1], g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * a[i];
                    }
                }
            }
            Op::Scale(c) => {
                let gx = buf(grads, inputs[0], g.len());
                gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b * *c);
            }
            Op::Sigmoid => {
                let y = out.data();
                let gx = buf(grads, inputs[0], g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * y[i] * (S::one() - y[i]);
                }
            }
            Op::Tanh => {
                let y = out.data();
                let gx = buf(grads, inputs[0], g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * (S::one() - y[i] * y[i]);
                }
            }
            Op::Exp => {
                let y = out.data();
                let gx = buf(grads, inputs[0], g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * y[i];
                }
            }
            Op::Log => {
                let x = val(0).data().to_vec();
                let gx = buf(grads, inputs[0], g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] / x[i];
                }
            }
            Op::ClampedLog => {
                let x = val(0).data().to_vec();
                let floor = S::lit(LOG_FLOOR);
                let y = out.data();
                let gx = buf(grads, inputs[0], g.len());
                for i in 0..g.len() {
                    if x[i] > S::zero() && y[i] > floor {
                        gx[i] += g[i] / x[i];
                    }
                }
            }
            Op::Softmax => {
                let k = *out.shape().last().unwrap();
                let y = out.data();
                let gx = buf(grads, inputs[0], g.len());
                if k > 0 {
                    for r in 0..g.len() / k {
                        let (ys, gs) = (&y[r * k..(r + 1) * k], &g[r * k..(r + 1) * k]);
                        let dot: S = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                        for j in 0..k {
                            gx[r * k + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                }
            }
            Op::Concat => {
                let total = *out.shape().last().unwrap();
                let rows = if total == 0 { 0 } else { g.len() / total };
                let mut offset = 0;
                for (i, id) in inputs.iter().enumerate() {
                    let w = *val(i).shape().last().unwrap();
                    if wants(i) {
                        let gx = buf(grads, *id, rows * w);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            gx[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, &b)| *a += b);
                        }
                    }
                    offset += w;
                }
            }
            Op::MaxAxis0 { .. } => {
                let len = val(0).len();
                let gx = buf(grads, inputs[0], len);
                for (j, &src) in node.argmax.iter().enumerate() {
                    gx[src] += g[j];
                }
            }
            Op::L2Norm => {
                let x = val(0).data();
                let y = out.item();
                if y > S::zero() {
                    let scale = g[0] / y;
                    let gx = buf(grads, inputs[0], x.len());
                    for i in 0..x.len() {
                        gx[i] += scale * x[i];
                    }
                }
            }
            Op::Sum => {
                let len = val(0).len();
                let gx = buf(grads, inputs[0], len);
                gx.iter_mut().for_each(|a| *a += g[0]);
            }
            Op::ApplyMask(mask) => {
                let gx = buf(grads, inputs[0], g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * mask[i];
                }
            }
            Op::Select(mask) => {
                for (i, take) in [(0usize, true), (1usize, false)] {
                    if wants(i) {
                        let gx = buf(grads, inputs[i], g.len());
                        for j in 0..g.len() {
                            if mask[j] == take {
                                gx[j] += g[j];
                            }
                        }
                    }
                }
            }
            Op::SliceAxis0(t) => {
                let len = val(0).len();
                let block = g.len();
                let gx = buf(grads, inputs[0], len);
                gx[t * block..(t + 1) * block]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, &b)| *a += b);
            }
            Op::Stack => {
                let block = val(0).len();
                for (i, id) in inputs.iter().enumerate() {
                    if wants(i) {
                        let gx = buf(grads, *id, block);
                        gx.iter_mut()
                            .zip(&g[i * block..(i + 1) * block])
                            .for_each(|(a, &b)| *a += b);
                    }
                }
            }
            Op::Gather { indices, .. } => {
                let table = val(0);
                let cols = table.shape()[1];
                let gx = buf(grads, inputs[0], table.len());
                for (r, &ix) in indices.iter().enumerate() {
                    gx[ix * cols..(ix + 1) * cols]
                        .iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                        .for_each(|(a, &b)| *a += b);
                }
            }
            Op::Pick(indices) => {
                let s = val(0).shape().to_vec();
                let gx = buf(grads, inputs[0], s[0] * s[1]);
                for (b, &k) in indices.iter().enumerate() {
                    gx[b * s[1] + k] += g[b];
                }
            }
        }
    }

    // Convenience wrappers over `apply`.

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Transpose, &[a])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: S) -> Result<NodeId> {
        self.apply(Op::Scale(c), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Tanh, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Exp, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Log, &[a])
    }

    pub fn clamped_log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::ClampedLog, &[a])
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Softmax, &[a])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(Op::Concat, parts)
    }

    pub fn max_axis0(&mut self, a: NodeId, lengths: Option<Vec<usize>>) -> Result<NodeId> {
        self.apply(Op::MaxAxis0 { lengths }, &[a])
    }

    pub fn l2_norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::L2Norm, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum, &[a])
    }

    pub fn apply_mask(&mut self, a: NodeId, mask: Vec<S>) -> Result<NodeId> {
        self.apply(Op::ApplyMask(mask), &[a])
    }

    pub fn select(&mut self, mask: Vec<bool>, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Select(mask), &[a, b])
    }

    pub fn slice_axis0(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        self.apply(Op::SliceAxis0(i), &[a])
    }

    pub fn stack(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(Op::Stack, parts)
    }

    pub fn gather(&mut self, table: NodeId, indices: Vec<usize>, index_shape: Vec<usize>) -> Result<NodeId> {
        self.apply(
            Op::Gather {
                indices,
                index_shape,
            },
            &[table],
        )
    }

    pub fn pick(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.apply(Op::Pick(indices), &[a])
    }
}

#[inline]
fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

fn is_suffix(suffix: &[usize], shape: &[usize]) -> bool {
    suffix.len() <= shape.len() && shape[shape.len() - suffix.len()..] == *suffix
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn matmul_into<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
}

fn max_axis0<S: Scalar>(x: &Tensor<S>, lengths: Option<&[usize]>) -> Result<(Tensor<S>, Vec<usize>)> {
    let s = x.shape();
    if s.is_empty() || s[0] == 0 {
        return Err(Error::shape("max_axis0", s, &[]));
    }
    let steps = s[0];
    let block: usize = s[1..].iter().product();
    let per_item = match lengths {
        Some(l) => {
            if s.len() < 2 || l.len() != s[1] {
                return Err(Error::shape("max_axis0", s, &[l.len()]));
            }
            if let Some(&bad) = l.iter().find(|&&n| n == 0 || n > steps) {
                return Err(Error::shape("max_axis0", s, &[bad]));
            }
            block / s[1]
        }
        None => block,
    };
    let d = x.data();
    let mut out = vec![S::zero(); block];
    let mut arg = vec![0usize; block];
    for j in 0..block {
        let limit = lengths.map_or(steps, |l| l[j / per_item]);
        let mut best = d[j];
        let mut best_t = 0;
        for t in 1..limit {
            let v = d[t * block + j];
            // strict comparison keeps the lowest index on ties
            if v > best {
                best = v;
                best_t = t;
            }
        }
        out[j] = best;
        arg[j] = best_t * block + j;
    }
    Ok((Tensor::new(s[1..].to_vec(), out)?, arg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let z = g.constant(t(&[2], &[0.0, 0.0]));
        let s = g.softmax(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let eye = g.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let a_t = t(&[3, 2], &[1.5, -2., 3., 4., 0.25, 7.]);
        let a = g.constant(a_t.clone());
        let p = g.matmul(eye, a).unwrap();
        assert_eq!(g.value(p), &a_t);
    }

    #[test]
    fn max_over_time_records_argmax() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1., 5., 3., 2.]));
        let m = g.max_axis0(x, None).unwrap();
        assert_eq!(g.value(m).data(), &[3., 5.]);
        // flat positions of (t=1, j=0) and (t=0, j=1)
        assert_eq!(g.argmax(m), &[2, 1]);
    }

    #[test]
    fn max_ties_pick_lowest_time() {
        let mut g = Graph::new();
        let x = g.param(t(&[3, 1], &[2., 2., 2.]));
        let m = g.max_axis0(x, None).unwrap();
        let s = g.sum(m).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1., 0., 0.]);
    }

    #[test]
    fn masked_max_ignores_padding() {
        let mut g = Graph::new();
        // [T=3, B=2, n=1]; item 1 has length 1
        let x = g.constant(t(&[3, 2, 1], &[1., 1., 2., 9., 3., 9.]));
        let m = g.max_axis0(x, Some(vec![3, 1])).unwrap();
        assert_eq!(g.value(m).data(), &[3., 1.]);
    }

    #[test]
    fn mismatched_shapes_name_both() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 3], &[0.; 6]));
        let b = g.constant(t(&[2, 3], &[0.; 6]));
        match g.matmul(a, b) {
            Err(Error::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(g.log(a), Err(Error::Domain(_))));
    }

    #[test]
    fn clamped_log_counts_events() {
        let mut g = Graph::new();
        let a = g.constant(t(&[3], &[1.0, 0.0, 0.5]));
        let l = g.clamped_log(a).unwrap();
        assert_eq!(g.value(l).data()[1], LOG_FLOOR);
        assert_eq!(g.clamp_events(), 1);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1., 2., 3.]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[2., 4., 6.]);
    }

    #[test]
    fn constant_root_gives_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1., 2.]));
        let c = g.constant(t(&[2], &[3., 4.]));
        let s = g.sum(c).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0., 0.]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1., 2.]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn log_softmax_gradient_at_origin() {
        let mut g = Graph::new();
        let z = g.param(t(&[1, 2], &[0., 0.]));
        let p = g.softmax(z).unwrap();
        let l = g.log(p).unwrap();
        let picked = g.pick(l, vec![0]).unwrap();
        let s = g.sum(picked).unwrap();
        let grads = g.backward(s).unwrap();
        let gz = grads.wrt(z);
        assert!((gz.data()[0] - 0.5).abs() < 1e-15);
        assert!((gz.data()[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn l2_norm_zero_iff_zero() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::<f64>::zeros(&[3]));
        let n = g.l2_norm(z).unwrap();
        assert_eq!(g.value(n).item(), 0.0);
        let a = g.constant(t(&[2], &[3., 4.]));
        let n = g.l2_norm(a).unwrap();
        assert_eq!(g.value(n).item(), 5.0);
    }

    #[test]
    fn broadcast_add_sums_bias_gradient() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.param(t(&[2], &[10., 20.]));
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[11., 22., 13., 24.]);
        let s = g.sum(y).unwrap();
        assert_eq!(g.backward(s).unwrap().wrt(b).data(), &[2., 2.]);
    }

    #[test]
    fn works_in_single_precision() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::new(vec![2], vec![1.0f32, 2.0]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        assert_eq!(g.backward(s).unwrap().wrt(x).data(), &[2.0f32, 4.0]);
    }
}
