//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Nodes are appended
//! in evaluation order, so the tape is already a topological order and
//! [`Tape::backward`] walks it once in reverse. Parameters enter the tape via
//! [`Tape::param`], which remembers the binding so [`Gradients::accumulate_into`]
//! can route gradients back to the owning [`ParamStore`].

mod kernels;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{numel, Tensor};

use kernels::{all_finite, broadcast_shape, broadcast_zip, inverse_permutation, split_axis, Addressing};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// The operation that produced a node.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    /// `[.., m, k] x [k, n]` (shared right operand) or `[.., m, k] x [.., k, n]`.
    MatMul,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Exp,
    Log,
    Sqrt,
    Scale(f64),
    AddScalar(f64),
    SoftmaxLastDim,
    MeanAxis { axis: usize, keepdim: bool },
    SumAxis { axis: usize, keepdim: bool },
    SumAll,
    MeanAll,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    /// Swaps the last two axes.
    Transpose,
    Permute(Vec<usize>),
    Reshape(Vec<usize>),
    /// Gathers positions `indices` along `axis`; repeats are allowed.
    IndexSelect { axis: usize, indices: Vec<usize> },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::MatMul => "matmul",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::LeakyRelu(_) => "leaky_relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sqrt => "sqrt",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::SoftmaxLastDim => "softmax_lastdim",
            OpKind::MeanAxis { .. } => "mean_axis",
            OpKind::SumAxis { .. } => "sum_axis",
            OpKind::SumAll => "sum",
            OpKind::MeanAll => "mean",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Transpose => "transpose",
            OpKind::Permute(_) => "permute",
            OpKind::Reshape(_) => "reshape",
            OpKind::IndexSelect { .. } => "index_select",
        }
    }
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: OpKind,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Records one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    bindings: HashMap<String, Var>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bindings: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape that never tracks gradients; `backward` on it is an error.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a tensor as a leaf; it is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad() && self.grad_enabled;
        self.push_raw(t.shape().to_vec(), t.data().to_vec(), OpKind::Leaf, vec![], rg)
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push_raw(t.shape().to_vec(), t.data().to_vec(), OpKind::Leaf, vec![], false)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "constant",
                format!("shape {shape:?} with {} values", data.len()),
            ));
        }
        Ok(self.push_raw(shape.to_vec(), data, OpKind::Leaf, vec![], false))
    }

    /// Binds the named parameter of `store`; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bindings.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let rg = self.grad_enabled;
        let v = self.push_raw(t.shape().to_vec(), t.data().to_vec(), OpKind::Leaf, vec![], rg);
        self.bindings.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn value(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("tape nodes hold consistent shapes")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].data[0]
    }

    fn push_raw(
        &mut self,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: OpKind,
        inputs: Vec<Var>,
        requires_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            shape,
            data,
            op,
            inputs,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: OpKind, inputs: Vec<Var>) -> Result<Var> {
        if !all_finite(&data) {
            let index = data.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::NonFinite {
                op: op.name(),
                index,
            });
        }
        let rg = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(shape, data, op, inputs, rg))
    }

    /// Applies `op` to `inputs`; the named methods below are shorthands for this.
    pub fn forward_op(&mut self, op: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::shape(
                    op.name(),
                    format!("expects {n} inputs, got {}", inputs.len()),
                ));
            }
            Ok(())
        };
        match &op {
            OpKind::Leaf => Err(Error::shape("leaf", "leaves are created with Tape::leaf")),
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                arity(2)?;
                self.binary(op, inputs[0], inputs[1])
            }
            OpKind::MatMul => {
                arity(2)?;
                self.matmul_impl(inputs[0], inputs[1])
            }
            OpKind::Concat { axis } => self.concat_impl(inputs, *axis),
            _ => {
                arity(1)?;
                self.unary(op, inputs[0])
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(OpKind::Div, a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(OpKind::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(OpKind::Relu, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(OpKind::LeakyRelu(slope), x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(OpKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(OpKind::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(OpKind::Sqrt, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(OpKind::Scale(c), x)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(OpKind::AddScalar(c), x)
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        self.unary(OpKind::SoftmaxLastDim, x)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.unary(OpKind::MeanAxis { axis, keepdim }, x)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.unary(OpKind::SumAxis { axis, keepdim }, x)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.unary(OpKind::SumAll, x)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.unary(OpKind::MeanAll, x)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        self.concat_impl(xs, axis)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.unary(OpKind::Slice { axis, start, len }, x)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.unary(OpKind::Transpose, x)
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        self.unary(OpKind::Permute(perm.to_vec()), x)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.unary(OpKind::Reshape(shape.to_vec()), x)
    }

    pub fn index_select(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        self.unary(
            OpKind::IndexSelect {
                axis,
                indices: indices.to_vec(),
            },
            x,
        )
    }

    /// `x @ w + b` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    fn binary(&mut self, op: OpKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let out_shape = broadcast_shape(sa, sb)
            .ok_or_else(|| Error::shape(op.name(), format!("{sa:?} vs {sb:?}")))?;
        let aa = Addressing::new(sa, &out_shape);
        let ab = Addressing::new(sb, &out_shape);
        let (da, db) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        let n = numel(&out_shape);
        let data = match op {
            OpKind::Add => broadcast_zip(da, &aa, db, &ab, n, |x, y| x + y),
            OpKind::Sub => broadcast_zip(da, &aa, db, &ab, n, |x, y| x - y),
            OpKind::Mul => broadcast_zip(da, &aa, db, &ab, n, |x, y| x * y),
            OpKind::Div => broadcast_zip(da, &aa, db, &ab, n, |x, y| x / y),
            _ => unreachable!("binary op"),
        };
        self.push(out_shape, data, op, vec![a, b])
    }

    fn matmul_dims(&self, a: Var, b: Var) -> Result<(usize, usize, usize, usize, bool, Vec<usize>)> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let err = || Error::shape("matmul", format!("{sa:?} x {sb:?}"));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(err());
        }
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        let shared = sb.len() == 2;
        if !shared && batch_a != batch_b {
            return Err(err());
        }
        let mut out = batch_a.to_vec();
        out.extend([m, n]);
        Ok((numel(batch_a), m, k, n, shared, out))
    }

    fn matmul_impl(&mut self, a: Var, b: Var) -> Result<Var> {
        let (batch, m, k, n, shared, out_shape) = self.matmul_dims(a, b)?;
        let data = kernels::matmul(&self.nodes[a.0].data, &self.nodes[b.0].data, batch, m, k, n, shared);
        self.push(out_shape, data, OpKind::MatMul, vec![a, b])
    }

    fn concat_impl(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.nodes[first.0].shape.clone();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for v in xs {
            let s = &self.nodes[v.0].shape;
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for v in xs {
                let node = &self.nodes[v.0];
                let chunk = node.shape[axis] * inner;
                data.extend_from_slice(&node.data[o * chunk..(o + 1) * chunk]);
            }
        }
        self.push(out_shape, data, OpKind::Concat { axis }, xs.to_vec())
    }

    fn unary(&mut self, op: OpKind, x: Var) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        let src = &self.nodes[x.0].data;
        let map = |f: &dyn Fn(f64) -> f64| src.iter().map(|&v| f(v)).collect::<Vec<_>>();
        let (out_shape, data) = match &op {
            OpKind::Tanh => (shape, map(&f64::tanh)),
            OpKind::Relu => (shape, map(&|v| v.max(0.0))),
            OpKind::LeakyRelu(s) => (shape, map(&|v| if v > 0.0 { v } else { s * v })),
            OpKind::Exp => (shape, map(&f64::exp)),
            OpKind::Log => (shape, map(&f64::ln)),
            OpKind::Sqrt => (shape, map(&f64::sqrt)),
            OpKind::Scale(c) => (shape, map(&|v| c * v)),
            OpKind::AddScalar(c) => (shape, map(&|v| c + v)),
            OpKind::SoftmaxLastDim => {
                let w = *shape.last().unwrap();
                (shape, kernels::softmax_rows(src, w))
            }
            OpKind::MeanAxis { axis, keepdim } | OpKind::SumAxis { axis, keepdim } => {
                if *axis >= shape.len() {
                    return Err(Error::shape(op.name(), format!("axis {axis} for {shape:?}")));
                }
                let (outer, len, inner) = split_axis(&shape, *axis);
                let div = if matches!(op, OpKind::MeanAxis { .. }) { len as f64 } else { 1.0 };
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for a in 0..len {
                        let row = &src[(o * len + a) * inner..(o * len + a + 1) * inner];
                        for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v /= div);
                let mut s = shape.clone();
                if *keepdim {
                    s[*axis] = 1;
                } else {
                    s.remove(*axis);
                    if s.is_empty() {
                        s.push(1);
                    }
                }
                (s, out)
            }
            OpKind::SumAll => (vec![1], vec![src.iter().sum()]),
            OpKind::MeanAll => (vec![1], vec![src.iter().sum::<f64>() / src.len() as f64]),
            OpKind::Slice { axis, start, len } => {
                if *axis >= shape.len() || *len == 0 || start + len > shape[*axis] {
                    return Err(Error::shape(
                        "slice",
                        format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
                    ));
                }
                let (outer, ext, inner) = split_axis(&shape, *axis);
                let mut out = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = (o * ext + start) * inner;
                    out.extend_from_slice(&src[base..base + len * inner]);
                }
                let mut s = shape.clone();
                s[*axis] = *len;
                (s, out)
            }
            OpKind::Transpose => {
                if shape.len() < 2 {
                    return Err(Error::shape("transpose", format!("rank of {shape:?} < 2")));
                }
                let r = shape.len();
                let mut perm: Vec<usize> = (0..r).collect();
                perm.swap(r - 2, r - 1);
                let out = kernels::permute(src, &shape, &perm);
                let s = perm.iter().map(|&p| shape[p]).collect();
                (s, out)
            }
            OpKind::Permute(perm) => {
                let mut seen = vec![false; shape.len()];
                let valid = perm.len() == shape.len()
                    && perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true));
                if !valid {
                    return Err(Error::shape("permute", format!("{perm:?} for {shape:?}")));
                }
                let out = kernels::permute(src, &shape, perm);
                let s = perm.iter().map(|&p| shape[p]).collect();
                (s, out)
            }
            OpKind::Reshape(to) => {
                if numel(to) != src.len() || to.contains(&0) {
                    return Err(Error::shape("reshape", format!("{shape:?} -> {to:?}")));
                }
                (to.clone(), src.clone())
            }
            OpKind::IndexSelect { axis, indices } => {
                if *axis >= shape.len() || indices.is_empty() || indices.iter().any(|&i| i >= shape[*axis]) {
                    return Err(Error::shape(
                        "index_select",
                        format!("indices out of range for axis {axis} of {shape:?}"),
                    ));
                }
                let (outer, ext, inner) = split_axis(&shape, *axis);
                let mut out = Vec::with_capacity(outer * indices.len() * inner);
                for o in 0..outer {
                    for &i in indices {
                        let base = (o * ext + i) * inner;
                        out.extend_from_slice(&src[base..base + inner]);
                    }
                }
                let mut s = shape.clone();
                s[*axis] = indices.len();
                (s, out)
            }
            OpKind::Leaf
            | OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::Div
            | OpKind::MatMul
            | OpKind::Concat { .. } => {
                return Err(Error::shape(op.name(), "not a unary op"));
            }
        };
        self.push(out_shape, data, op, vec![x])
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    ///
    /// Only leaves keep their gradients in the result; intermediate buffers are
    /// released as soon as they have been propagated.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Backward("empty tape (no forward pass recorded)".into()));
        }
        if !self.grad_enabled {
            return Err(Error::Backward("tape was created in inference mode".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Backward("loss does not belong to this tape".into()));
        }
        if numel(&self.nodes[loss.0].shape) != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let input_grads = self.vjp(node, &g);
            for (v, gi) in node.inputs.iter().zip(input_grads) {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(Gradients {
            grads,
            bindings: self.bindings,
        })
    }

    /// Vector-Jacobian products: one gradient buffer per input of `node`.
    fn vjp(&self, node: &Node, g: &[f64]) -> Vec<Vec<f64>> {
        let x = |i: usize| &self.nodes[node.inputs[i].0];
        let y = &node.data;
        let elementwise = |f: &dyn Fn(usize) -> f64| -> Vec<Vec<f64>> {
            vec![(0..g.len()).map(|i| g[i] * f(i)).collect()]
        };
        match &node.op {
            OpKind::Leaf => vec![],
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                let (a, b) = (x(0), x(1));
                let aa = Addressing::new(&a.shape, &node.shape);
                let ab = Addressing::new(&b.shape, &node.shape);
                let (ga_full, gb_full): (Vec<f64>, Vec<f64>) = match node.op {
                    OpKind::Add => (g.to_vec(), g.to_vec()),
                    OpKind::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                    OpKind::Mul => (
                        broadcast_zip(g, &Addressing::Same, &b.data, &ab, g.len(), |g, y| g * y),
                        broadcast_zip(g, &Addressing::Same, &a.data, &aa, g.len(), |g, x| g * x),
                    ),
                    OpKind::Div => {
                        let ga = broadcast_zip(g, &Addressing::Same, &b.data, &ab, g.len(), |g, y| g / y);
                        // d(a/b)/db = -(a/b)/b, and a/b is this node's output
                        let q = broadcast_zip(&node.data, &Addressing::Same, &b.data, &ab, g.len(), |o, y| o / y);
                        (ga, g.iter().zip(&q).map(|(g, q)| -g * q).collect())
                    }
                    _ => unreachable!(),
                };
                vec![
                    kernels::reduce_to(&ga_full, &aa, a.data.len()),
                    kernels::reduce_to(&gb_full, &ab, b.data.len()),
                ]
            }
            OpKind::MatMul => {
                let (a, b) = (x(0), x(1));
                let m = a.shape[a.shape.len() - 2];
                let k = a.shape[a.shape.len() - 1];
                let n = b.shape[b.shape.len() - 1];
                let batch = a.data.len() / (m * k);
                let shared = b.shape.len() == 2;
                let (ga, gb) = kernels::matmul_backward(g, &a.data, &b.data, batch, m, k, n, shared);
                vec![ga, gb]
            }
            OpKind::Tanh => elementwise(&|i| 1.0 - y[i] * y[i]),
            OpKind::Relu => elementwise(&|i| if x(0).data[i] > 0.0 { 1.0 } else { 0.0 }),
            OpKind::LeakyRelu(s) => elementwise(&|i| if x(0).data[i] > 0.0 { 1.0 } else { *s }),
            OpKind::Exp => elementwise(&|i| y[i]),
            OpKind::Log => elementwise(&|i| 1.0 / x(0).data[i]),
            OpKind::Sqrt => elementwise(&|i| 0.5 / y[i]),
            OpKind::Scale(c) => elementwise(&|_| *c),
            OpKind::AddScalar(_) => vec![g.to_vec()],
            OpKind::SoftmaxLastDim => {
                let w = *node.shape.last().unwrap();
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), out) in g.chunks(w).zip(y.chunks(w)).zip(gx.chunks_mut(w)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), yv) in out.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![gx]
            }
            OpKind::MeanAxis { axis, .. } | OpKind::SumAxis { axis, .. } => {
                let src = x(0);
                let (outer, len, inner) = split_axis(&src.shape, *axis);
                let scale = if matches!(node.op, OpKind::MeanAxis { .. }) { 1.0 / len as f64 } else { 1.0 };
                let mut gx = vec![0.0; src.data.len()];
                for o in 0..outer {
                    let gr = &g[o * inner..(o + 1) * inner];
                    for a in 0..len {
                        let dst = &mut gx[(o * len + a) * inner..(o * len + a + 1) * inner];
                        for (d, gv) in dst.iter_mut().zip(gr) {
                            *d = gv * scale;
                        }
                    }
                }
                vec![gx]
            }
            OpKind::SumAll => vec![vec![g[0]; x(0).data.len()]],
            OpKind::MeanAll => {
                let n = x(0).data.len();
                vec![vec![g[0] / n as f64; n]]
            }
            OpKind::Concat { axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut out: Vec<Vec<f64>> = node
                    .inputs
                    .iter()
                    .map(|v| Vec::with_capacity(self.nodes[v.0].data.len()))
                    .collect();
                for o in 0..outer {
                    let mut offset = o * total * inner;
                    for (k, v) in node.inputs.iter().enumerate() {
                        let chunk = self.nodes[v.0].shape[*axis] * inner;
                        out[k].extend_from_slice(&g[offset..offset + chunk]);
                        offset += chunk;
                    }
                }
                out
            }
            OpKind::Slice { axis, start, len } => {
                let src = x(0);
                let (outer, ext, inner) = split_axis(&src.shape, *axis);
                let mut gx = vec![0.0; src.data.len()];
                for o in 0..outer {
                    let base = (o * ext + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![gx]
            }
            OpKind::Transpose => {
                let r = node.shape.len();
                let mut perm: Vec<usize> = (0..r).collect();
                perm.swap(r - 2, r - 1);
                vec![kernels::permute(g, &node.shape, &perm)]
            }
            OpKind::Permute(perm) => {
                vec![kernels::permute(g, &node.shape, &inverse_permutation(perm))]
            }
            OpKind::Reshape(_) => vec![g.to_vec()],
            OpKind::IndexSelect { axis, indices } => {
                let src = x(0);
                let (outer, ext, inner) = split_axis(&src.shape, *axis);
                let mut gx = vec![0.0; src.data.len()];
                let n_idx = indices.len();
                for o in 0..outer {
                    for (j, &i) in indices.iter().enumerate() {
                        let from = (o * n_idx + j) * inner;
                        let to = (o * ext + i) * inner;
                        for (d, gv) in gx[to..to + inner].iter_mut().zip(&g[from..from + inner]) {
                            *d += gv;
                        }
                    }
                }
                vec![gx]
            }
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    bindings: HashMap<String, Var>,
}

impl Gradients {
    /// Gradient of a leaf; `None` if it does not require grad or is unreachable.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds each bound parameter's gradient into its slot in `store`.
    ///
    /// Bound parameters the loss does not depend on receive a zero gradient.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        let mut names: Vec<&String> = self.bindings.keys().collect();
        names.sort();
        for name in names {
            let v = self.bindings[name];
            let t = store
                .get_mut(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            match self.get(v) {
                Some(g) => t.accumulate_grad(g)?,
                None => t.accumulate_grad(&vec![0.0; t.numel()])?,
            }
        }
        Ok(())
    }
}
