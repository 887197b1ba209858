//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Values are computed eagerly when an operation is recorded. The tape is a
//! Wengert list in topological order, so `backward` is a single reverse sweep
//! that accumulates adjoints by addition.

mod gradcheck;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_5pt, tape_gradient};
pub use tensor::Tensor;

use tensor::{axis_blocks, broadcast_index_map, broadcast_shape, broadcast_to, matmul, transpose};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Externally evaluated row-wise scalar function `y[r] = f(row inputs, shared inputs)`.
///
/// `jacobians[i]` holds `∂y[r]/∂input_i` as an `[n, k_i]` tensor. Row-aligned
/// inputs have shape `[n, k_i]`; shared inputs have shape `[k_i]` and receive
/// the sum over rows.
#[derive(Clone, Debug, PartialEq)]
pub struct RowFn {
    pub name: &'static str,
    pub value: Tensor,
    pub jacobians: Vec<Tensor>,
    pub shared: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    MatMul,
    Transpose,
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    Exp,
    Log,
    Neg,
    Sigmoid,
    Tanh,
    /// Softmax over the last axis.
    Softmax,
    Erf,
    /// Identity inside `[lo, hi]`, constant (zero gradient) outside.
    Clamp { lo: f64, hi: f64 },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    Broadcast { shape: Vec<usize> },
    Reshape { shape: Vec<usize> },
    Rows(Box<RowFn>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Pow => "pow",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Neg => "neg",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Softmax => "softmax",
            Op::Erf => "erf",
            Op::Clamp { .. } => "clamp",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Broadcast { .. } => "broadcast",
            Op::Reshape { .. } => "reshape",
            Op::Rows(f) => f.name,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TapeNode {
    pub id: usize,
    pub op: Op,
    pub inputs: Vec<usize>,
    pub value: Tensor,
    pub requires_grad: bool,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of the root with respect to `v`, zero-filled when `v` is not
    /// an ancestor of the root.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
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

    pub fn node(&self, v: Var) -> &TapeNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, value: Tensor, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(TapeNode {
            id,
            op,
            inputs,
            value,
            requires_grad,
        });
        Var(id)
    }

    /// Differentiable leaf (a parameter or any input we want gradients for).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, vec![], t, true)
    }

    /// Leaf excluded from gradient propagation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, vec![], t, false)
    }

    pub fn scalar_const(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    /// Appends `op` applied to `inputs`, evaluating it eagerly.
    ///
    /// Elementwise binary ops broadcast their operands numpy-style by
    /// inserting explicit `Broadcast` nodes.
    pub fn record(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(Error::domain(op.name(), format!("unknown node {}", v.0)));
            }
        }
        let mut ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        if matches!(op, Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow) {
            expect_arity(&op, &ids, 2)?;
            let (sa, sb) = (self.shape(inputs[0]).to_vec(), self.shape(inputs[1]).to_vec());
            if sa != sb {
                let target = broadcast_shape(&sa, &sb).ok_or_else(|| Error::ShapeMismatch {
                    op: op.name(),
                    lhs: sa.clone(),
                    rhs: sb.clone(),
                })?;
                if sa != target {
                    ids[0] = self.broadcast(inputs[0], &target)?.0;
                }
                if sb != target {
                    ids[1] = self.broadcast(inputs[1], &target)?.0;
                }
            }
        }
        let value = self.forward(&op, &ids)?;
        if !value.all_finite() {
            return Err(Error::domain(op.name(), "non-finite result"));
        }
        let requires_grad = ids.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(op, ids, value, requires_grad))
    }

    fn forward(&self, op: &Op, ids: &[usize]) -> Result<Tensor> {
        let val = |k: usize| &self.nodes[ids[k]].value;
        let unary = |f: &dyn Fn(f64) -> f64| -> Result<Tensor> {
            expect_arity(op, ids, 1)?;
            Ok(val(0).map(f))
        };
        match op {
            Op::Leaf => Err(Error::domain("record", "leaves are created with leaf/constant")),
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Pow => {
                let (a, b) = (val(0), val(1));
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add => |x, y| x + y,
                    Op::Sub => |x, y| x - y,
                    Op::Mul => |x, y| x * y,
                    Op::Div => |x, y| x / y,
                    _ => |x: f64, y: f64| x.powf(y),
                };
                if matches!(op, Op::Pow) {
                    for (&x, &y) in a.data().iter().zip(b.data()) {
                        if x < 0.0 && y.fract() != 0.0 {
                            return Err(Error::domain("pow", format!("{x}^{y}")));
                        }
                    }
                }
                if matches!(op, Op::Div) && b.data().contains(&0.0) {
                    return Err(Error::domain("div", "division by zero"));
                }
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(a.shape().to_vec(), data)
            }
            Op::MatMul => {
                expect_arity(op, ids, 2)?;
                let (a, b) = (val(0), val(1));
                if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
                    return Err(Error::ShapeMismatch {
                        op: "matmul",
                        lhs: a.shape().to_vec(),
                        rhs: b.shape().to_vec(),
                    });
                }
                Ok(matmul(a, b))
            }
            Op::Transpose => {
                expect_arity(op, ids, 1)?;
                if val(0).ndim() != 2 {
                    return Err(Error::ShapeMismatch {
                        op: "transpose",
                        lhs: val(0).shape().to_vec(),
                        rhs: vec![],
                    });
                }
                Ok(transpose(val(0)))
            }
            Op::Sum { axis } | Op::Mean { axis } => {
                expect_arity(op, ids, 1)?;
                let a = val(0);
                let mean = matches!(op, Op::Mean { .. });
                match axis {
                    None => {
                        let s: f64 = a.data().iter().sum();
                        let n = a.len().max(1) as f64;
                        Ok(Tensor::scalar(if mean { s / n } else { s }))
                    }
                    Some(ax) => {
                        check_axis(op, a.shape(), *ax)?;
                        let (outer, len, inner) = axis_blocks(a.shape(), *ax);
                        let mut out = vec![0.0; outer * inner];
                        for o in 0..outer {
                            for i in 0..len {
                                for j in 0..inner {
                                    out[o * inner + j] += a.data()[(o * len + i) * inner + j];
                                }
                            }
                        }
                        if mean {
                            out.iter_mut().for_each(|x| *x /= len as f64);
                        }
                        let mut shape = a.shape().to_vec();
                        shape.remove(*ax);
                        Tensor::new(shape, out)
                    }
                }
            }
            Op::Exp => unary(&f64::exp),
            Op::Log => {
                expect_arity(op, ids, 1)?;
                if let Some(x) = val(0).data().iter().find(|&&x| x <= 0.0) {
                    return Err(Error::domain("log", format!("log of {x}")));
                }
                Ok(val(0).map(f64::ln))
            }
            Op::Neg => unary(&|x| -x),
            Op::Sigmoid => unary(&sigmoid),
            Op::Tanh => unary(&f64::tanh),
            Op::Erf => unary(&statrs::function::erf::erf),
            Op::Clamp { lo, hi } => {
                if lo > hi {
                    return Err(Error::domain("clamp", format!("lo {lo} > hi {hi}")));
                }
                unary(&|x| x.clamp(*lo, *hi))
            }
            Op::Softmax => {
                expect_arity(op, ids, 1)?;
                let a = val(0);
                let last = *a.shape().last().unwrap_or(&1);
                let mut out = a.data().to_vec();
                for row in out.chunks_mut(last.max(1)) {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x - m).exp();
                        s += *x;
                    }
                    row.iter_mut().for_each(|x| *x /= s);
                }
                Tensor::new(a.shape().to_vec(), out)
            }
            Op::Concat { axis } => {
                if ids.is_empty() {
                    return Err(Error::domain("concat", "no inputs"));
                }
                let first = val(0).shape().to_vec();
                check_axis(op, &first, *axis)?;
                let mut total = 0;
                for k in 0..ids.len() {
                    let s = val(k).shape();
                    let compatible = s.len() == first.len()
                        && s.iter().zip(&first).enumerate().all(|(d, (x, y))| d == *axis || x == y);
                    if !compatible {
                        return Err(Error::ShapeMismatch {
                            op: "concat",
                            lhs: first.clone(),
                            rhs: s.to_vec(),
                        });
                    }
                    total += s[*axis];
                }
                let (outer, _, inner) = axis_blocks(&first, *axis);
                let mut out = Vec::with_capacity(outer * total * inner);
                for o in 0..outer {
                    for k in 0..ids.len() {
                        let t = val(k);
                        let len = t.shape()[*axis];
                        out.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
                    }
                }
                let mut shape = first;
                shape[*axis] = total;
                Tensor::new(shape, out)
            }
            Op::Slice { axis, start, end } => {
                expect_arity(op, ids, 1)?;
                let a = val(0);
                check_axis(op, a.shape(), *axis)?;
                let (outer, len, inner) = axis_blocks(a.shape(), *axis);
                if start >= end || *end > len {
                    return Err(Error::domain("slice", format!("range {start}..{end} of {len}")));
                }
                let mut out = Vec::with_capacity(outer * (end - start) * inner);
                for o in 0..outer {
                    out.extend_from_slice(&a.data()[(o * len + start) * inner..(o * len + end) * inner]);
                }
                let mut shape = a.shape().to_vec();
                shape[*axis] = end - start;
                Tensor::new(shape, out)
            }
            Op::Broadcast { shape } => {
                expect_arity(op, ids, 1)?;
                let a = val(0);
                match broadcast_shape(a.shape(), shape) {
                    Some(s) if &s == shape => Ok(broadcast_to(a, shape)),
                    _ => Err(Error::ShapeMismatch {
                        op: "broadcast",
                        lhs: a.shape().to_vec(),
                        rhs: shape.clone(),
                    }),
                }
            }
            Op::Reshape { shape } => {
                expect_arity(op, ids, 1)?;
                val(0).clone().reshaped(shape.clone())
            }
            Op::Rows(f) => {
                if f.jacobians.len() != ids.len() || f.shared.len() != ids.len() {
                    return Err(Error::domain(f.name, "jacobian count must match inputs"));
                }
                let n = f.value.len();
                for (k, jac) in f.jacobians.iter().enumerate() {
                    let s = val(k).shape();
                    let width = if f.shared[k] { val(k).len() } else { s.get(1).copied().unwrap_or(1) };
                    let rows_ok = f.shared[k] || s.first().copied().unwrap_or(1) == n;
                    if !rows_ok || jac.shape() != [n, width] {
                        return Err(Error::ShapeMismatch {
                            op: f.name,
                            lhs: jac.shape().to_vec(),
                            rhs: s.to_vec(),
                        });
                    }
                }
                Ok(f.value.clone())
            }
        }
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if !rv.shape().is_empty() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::scalar(1.0));
        for id in (0..=root.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad && !node.inputs.is_empty() {
                for (slot, contrib) in self.local_grads(node, &g) {
                    let input = node.inputs[slot];
                    if !self.nodes[input].requires_grad {
                        continue;
                    }
                    match &mut adj[input] {
                        Some(acc) => acc.add_assign(&contrib),
                        empty => *empty = Some(contrib),
                    }
                }
            }
            adj[id] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }

    fn local_grads(&self, node: &TapeNode, g: &Tensor) -> Vec<(usize, Tensor)> {
        let val = |k: usize| &self.nodes[node.inputs[k]].value;
        let y = &node.value;
        let zip2 = |a: &Tensor, b: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            Tensor::new(
                a.shape().to_vec(),
                a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
            )
            .expect("same shape")
        };
        let zip3 = |a: &Tensor, b: &Tensor, c: &Tensor, f: &dyn Fn(f64, f64, f64) -> f64| -> Tensor {
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .zip(c.data())
                .map(|((&x, &y), &z)| f(x, y, z))
                .collect();
            Tensor::new(a.shape().to_vec(), data).expect("same shape")
        };
        match &node.op {
            Op::Leaf => vec![],
            Op::Add => vec![(0, g.clone()), (1, g.clone())],
            Op::Sub => vec![(0, g.clone()), (1, g.map(|x| -x))],
            Op::Mul => vec![(0, zip2(g, val(1), &|g, b| g * b)), (1, zip2(g, val(0), &|g, a| g * a))],
            Op::Div => vec![
                (0, zip2(g, val(1), &|g, b| g / b)),
                (1, zip3(g, val(0), val(1), &|g, a, b| -g * a / (b * b))),
            ],
            Op::Pow => vec![
                (
                    0,
                    zip3(g, val(0), val(1), &|g, a, b| if b == 0.0 { 0.0 } else { g * b * a.powf(b - 1.0) }),
                ),
                (1, zip3(g, val(0), y, &|g, a, y| if a > 0.0 { g * y * a.ln() } else { 0.0 })),
            ],
            Op::MatMul => vec![
                (0, matmul(g, &transpose(val(1)))),
                (1, matmul(&transpose(val(0)), g)),
            ],
            Op::Transpose => vec![(0, transpose(g))],
            Op::Sum { axis } | Op::Mean { axis } => {
                let a = val(0);
                let mean = matches!(node.op, Op::Mean { .. });
                let out = match axis {
                    None => {
                        let scale = if mean { 1.0 / a.len().max(1) as f64 } else { 1.0 };
                        Tensor::full(a.shape(), g.item() * scale)
                    }
                    Some(ax) => {
                        let (outer, len, inner) = axis_blocks(a.shape(), *ax);
                        let scale = if mean { 1.0 / len as f64 } else { 1.0 };
                        let mut d = vec![0.0; a.len()];
                        for o in 0..outer {
                            for i in 0..len {
                                for j in 0..inner {
                                    d[(o * len + i) * inner + j] = g.data()[o * inner + j] * scale;
                                }
                            }
                        }
                        Tensor::new(a.shape().to_vec(), d).expect("shape")
                    }
                };
                vec![(0, out)]
            }
            Op::Exp => vec![(0, zip2(g, y, &|g, y| g * y))],
            Op::Log => vec![(0, zip2(g, val(0), &|g, a| g / a))],
            Op::Neg => vec![(0, g.map(|x| -x))],
            Op::Sigmoid => vec![(0, zip2(g, y, &|g, y| g * y * (1.0 - y)))],
            Op::Tanh => vec![(0, zip2(g, y, &|g, y| g * (1.0 - y * y)))],
            Op::Erf => vec![(
                0,
                zip2(g, val(0), &|g, a| g * std::f64::consts::FRAC_2_SQRT_PI * (-a * a).exp()),
            )],
            Op::Clamp { lo, hi } => vec![(
                0,
                zip2(g, val(0), &|g, a| if a >= *lo && a <= *hi { g } else { 0.0 }),
            )],
            Op::Softmax => {
                let last = *y.shape().last().unwrap_or(&1);
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d
                    .chunks_mut(last.max(1))
                    .zip(y.data().chunks(last.max(1)))
                    .zip(g.data().chunks(last.max(1)))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = yi * (gi - dot);
                    }
                }
                vec![(0, Tensor::new(y.shape().to_vec(), d).expect("shape"))]
            }
            Op::Concat { axis } => {
                let (outer, total, inner) = axis_blocks(y.shape(), *axis);
                let mut offset = 0;
                let mut out = Vec::with_capacity(node.inputs.len());
                for k in 0..node.inputs.len() {
                    let s = val(k).shape();
                    let len = s[*axis];
                    let mut d = Vec::with_capacity(val(k).len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    offset += len;
                    out.push((k, Tensor::new(s.to_vec(), d).expect("shape")));
                }
                out
            }
            Op::Slice { axis, start, end } => {
                let a = val(0);
                let (outer, len, inner) = axis_blocks(a.shape(), *axis);
                let w = end - start;
                let mut d = vec![0.0; a.len()];
                for o in 0..outer {
                    let dst = (o * len + start) * inner;
                    d[dst..dst + w * inner].copy_from_slice(&g.data()[o * w * inner..(o + 1) * w * inner]);
                }
                vec![(0, Tensor::new(a.shape().to_vec(), d).expect("shape"))]
            }
            Op::Broadcast { shape } => {
                let a = val(0);
                let map = broadcast_index_map(a.shape(), shape);
                let mut d = vec![0.0; a.len()];
                for (gi, &src) in g.data().iter().zip(&map) {
                    d[src] += gi;
                }
                vec![(0, Tensor::new(a.shape().to_vec(), d).expect("shape"))]
            }
            Op::Reshape { .. } => {
                vec![(0, g.clone().reshaped(val(0).shape().to_vec()).expect("shape"))]
            }
            Op::Rows(f) => {
                let n = g.len();
                f.jacobians
                    .iter()
                    .enumerate()
                    .map(|(k, jac)| {
                        let width = jac.shape()[1];
                        let t = if f.shared[k] {
                            let mut d = vec![0.0; width];
                            for r in 0..n {
                                for (j, dj) in d.iter_mut().enumerate() {
                                    *dj += g.data()[r] * jac.data()[r * width + j];
                                }
                            }
                            Tensor::new(val(k).shape().to_vec(), d)
                        } else {
                            let d = (0..n * width).map(|i| g.data()[i / width] * jac.data()[i]).collect();
                            Tensor::new(val(k).shape().to_vec(), d)
                        };
                        (k, t.expect("shape"))
                    })
                    .collect()
            }
        }
    }

    // ----- convenience wrappers -----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul, &[a, b])
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Div, &[a, b])
    }
    pub fn pow(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Pow, &[a, b])
    }
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        let c = self.scalar_const(p);
        self.pow(a, c)
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let c = self.scalar_const(s);
        self.mul(a, c)
    }
    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let c = self.scalar_const(s);
        self.add(a, c)
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul, &[a, b])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Transpose, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum { axis: None }, &[a])
    }
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.record(Op::Sum { axis: Some(axis) }, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Mean { axis: None }, &[a])
    }
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.record(Op::Mean { axis: Some(axis) }, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Log, &[a])
    }
    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Neg, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sigmoid, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Tanh, &[a])
    }
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Softmax, &[a])
    }
    pub fn erf(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Erf, &[a])
    }
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.record(Op::Clamp { lo, hi }, &[a])
    }
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.record(Op::Concat { axis }, parts)
    }
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.record(Op::Slice { axis, start, end }, &[a])
    }
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Broadcast { shape: shape.to_vec() }, &[a])
    }
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Reshape { shape: shape.to_vec() }, &[a])
    }
    pub fn rows(&mut self, f: RowFn, inputs: &[Var]) -> Result<Var> {
        self.record(Op::Rows(Box::new(f)), inputs)
    }

    /// Standard normal CDF built from `erf`, `½(1 + erf(x/√2))`.
    pub fn normal_cdf(&mut self, a: Var) -> Result<Var> {
        let s = self.scale(a, std::f64::consts::FRAC_1_SQRT_2)?;
        let e = self.erf(s)?;
        let e1 = self.add_scalar(e, 1.0)?;
        self.scale(e1, 0.5)
    }

    /// Log-sum-exp over `axis`. The shift is taken from the forward values and
    /// held constant, which leaves the gradient unchanged.
    pub fn logsumexp_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a);
        check_axis(&Op::Sum { axis: Some(axis) }, v.shape(), axis)?;
        let (outer, len, inner) = axis_blocks(v.shape(), axis);
        let mut shift = vec![f64::NEG_INFINITY; outer * inner];
        for o in 0..outer {
            for i in 0..len {
                for j in 0..inner {
                    let x = v.data()[(o * len + i) * inner + j];
                    shift[o * inner + j] = shift[o * inner + j].max(x);
                }
            }
        }
        let mut keep = v.shape().to_vec();
        keep[axis] = 1;
        let mut reduced = v.shape().to_vec();
        reduced.remove(axis);
        let shift_keep = self.constant(Tensor::new(keep, shift.clone())?);
        let centered = self.sub(a, shift_keep)?;
        let e = self.exp(centered)?;
        let s = self.sum_axis(e, axis)?;
        let l = self.log(s)?;
        let shift_red = self.constant(Tensor::new(reduced, shift)?);
        self.add(l, shift_red)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn expect_arity(op: &Op, ids: &[usize], n: usize) -> Result<()> {
    if ids.len() != n {
        return Err(Error::domain(op.name(), format!("expected {n} inputs, got {}", ids.len())));
    }
    Ok(())
}

fn check_axis(op: &Op, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::ShapeMismatch {
            op: op.name(),
            lhs: shape.to_vec(),
            rhs: vec![axis],
        });
    }
    Ok(())
}
