//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass as a
//! node holding its output value and enough context to run the backward
//! rule. Nodes are appended in execution order, so the tape is always
//! topologically sorted and backward is a single reverse sweep.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Exp,
    Log,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Binary(Elementwise, Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    Map {
        x: Var,
        name: &'static str,
        derivative: ScalarFn,
    },
    Softmax(Var),
    LogSoftmax(Var),
    MeanRows(Var),
    MaxRows { x: Var, argmax: Vec<usize> },
    Sum(Var),
    Row { x: Var, index: usize },
    StackRows(Vec<Var>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Binary(Elementwise::Add, ..) => "add",
            Op::Binary(Elementwise::Sub, ..) => "sub",
            Op::Binary(Elementwise::Mul, ..) => "mul",
            Op::Unary(Unary::Sigmoid, _) => "sigmoid",
            Op::Unary(Unary::Tanh, _) => "tanh",
            Op::Unary(Unary::Exp, _) => "exp",
            Op::Unary(Unary::Log, _) => "log",
            Op::Scale(..) => "scale",
            Op::Map { name, .. } => name,
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::MeanRows(_) => "mean_over_time",
            Op::MaxRows { .. } => "max_over_time",
            Op::Sum(_) => "sum",
            Op::Row { .. } => "row",
            Op::StackRows(_) => "stack_rows",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation tape for one forward/backward pass.
pub struct Graph {
    nodes: Vec<Node>,
    checked: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("checked", &self.checked)
            .finish()
    }
}

impl Graph {
    /// A graph in checked mode: every op output is scanned for NaN/Inf.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            checked: true,
        }
    }

    pub fn unchecked() -> Self {
        Graph {
            nodes: Vec::new(),
            checked: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Binary(_, a, b) => {
                self.requires_grad(*a) || self.requires_grad(*b)
            }
            Op::Transpose(x)
            | Op::Reshape(x)
            | Op::Unary(_, x)
            | Op::Scale(x, _)
            | Op::Map { x, .. }
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::MeanRows(x)
            | Op::MaxRows { x, .. }
            | Op::Sum(x)
            | Op::Row { x, .. } => self.requires_grad(*x),
            Op::StackRows(xs) => xs.iter().any(|x| self.requires_grad(*x)),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::dim(op, s, &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("transpose", x)?;
        let out = transpose_data(self.value(x).data(), r, c);
        self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push(value, Op::Reshape(x))
    }

    /// Elementwise binary op. Shapes must be equal, or one side a scalar.
    pub fn binary(&mut self, kind: Elementwise, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let op_name = Op::Binary(kind, a, b).name();
        let f = match kind {
            Elementwise::Add => |x: f64, y: f64| x + y,
            Elementwise::Sub => |x: f64, y: f64| x - y,
            Elementwise::Mul => |x: f64, y: f64| x * y,
        };
        let value = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else if vb.is_scalar() && (!va.is_scalar() || va.shape().len() >= vb.shape().len()) {
            let s = vb.item();
            va.map(|x| f(x, s))
        } else if va.is_scalar() {
            let s = va.item();
            vb.map(|y| f(s, y))
        } else {
            return Err(Error::dim(op_name, va.shape(), vb.shape()));
        };
        self.push(value, Op::Binary(kind, a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Elementwise::Mul, a, b)
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let v = self.value(x);
        let value = match kind {
            Unary::Sigmoid => v.map(sigmoid),
            Unary::Tanh => v.map(f64::tanh),
            Unary::Exp => v.map(f64::exp),
            Unary::Log => {
                if let Some(bad) = v.data().iter().find(|&&e| !(e > 0.0)) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("non-positive input {bad}"),
                    });
                }
                v.map(f64::ln)
            }
        };
        self.push(value, Op::Unary(kind, x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(x, factor))
    }

    /// Elementwise function with a caller-supplied derivative.
    pub fn map(
        &mut self,
        x: Var,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        derivative: ScalarFn,
    ) -> Result<Var> {
        let value = self.value(x).map(f);
        self.push(value, Op::Map { x, name, derivative })
    }

    /// Softmax along the trailing axis, row by row.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = row_wise(self.value(x), softmax_row);
        self.push(value, Op::Softmax(x))
    }

    /// Log-softmax along the trailing axis via the log-sum-exp form.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let value = row_wise(self.value(x), log_softmax_row);
        self.push(value, Op::LogSoftmax(x))
    }

    /// Column means of a `[T, d]` matrix, giving `[d]`.
    pub fn mean_over_time(&mut self, x: Var) -> Result<Var> {
        let (t, d) = self.time_dims("mean_over_time", x)?;
        let data = self.value(x).data();
        let mut out = vec![0.0; d];
        for row in data.chunks_exact(d) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / t as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        self.push(Tensor::new(vec![d], out)?, Op::MeanRows(x))
    }

    /// Column maxima of a `[T, d]` matrix. Ties go to the earliest row.
    pub fn max_over_time(&mut self, x: Var) -> Result<Var> {
        let (_, d) = self.time_dims("max_over_time", x)?;
        let data = self.value(x).data();
        let mut out = data[..d].to_vec();
        let mut argmax = vec![0; d];
        for (t, row) in data.chunks_exact(d).enumerate().skip(1) {
            for j in 0..d {
                if row[j] > out[j] {
                    out[j] = row[j];
                    argmax[j] = t;
                }
            }
        }
        self.push(Tensor::new(vec![d], out)?, Op::MaxRows { x, argmax })
    }

    fn time_dims(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        let (t, d) = self.matrix_dims(op, x)?;
        if t == 0 {
            return Err(Error::EmptySequence { op });
        }
        Ok((t, d))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Row `index` of a matrix as a `[1, d]` matrix.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let (r, d) = self.matrix_dims("row", x)?;
        if index >= r {
            return Err(Error::Contract(format!("row {index} of {r}")));
        }
        let value = Tensor::new(vec![1, d], self.value(x).row(index).to_vec())?;
        self.push(value, Op::Row { x, index })
    }

    /// Stacks `[1, d]` or `[d]` pieces into an `[n, d]` matrix.
    pub fn stack_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or(Error::EmptySequence { op: "stack_rows" })?;
        let d = self.value(first).len();
        let mut data = Vec::with_capacity(d * xs.len());
        for &x in xs {
            let v = self.value(x);
            if v.len() != d {
                return Err(Error::dim("stack_rows", self.shape(first), v.shape()));
            }
            data.extend_from_slice(v.data());
        }
        self.push(Tensor::new(vec![xs.len(), d], data)?, Op::StackRows(xs.to_vec()))
    }

    /// Arithmetic mean of scalar nodes.
    pub fn mean_scalars(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Contract("mean of an empty set".into()));
        }
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x)?;
        }
        self.scale(acc, 1.0 / xs.len() as f64)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.shape(*a));
                let n = self.shape(*b)[1];
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(gd, self.value(*b).data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(self.value(*a).data(), gd, &mut db, m, k, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = dims2(self.shape(*x));
                self.accumulate(grads, *x, transpose_data(gd, c, r));
            }
            Op::Reshape(x) => self.accumulate(grads, *x, gd.to_vec()),
            Op::Binary(kind, a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da: Option<Vec<f64>> = self.requires_grad(*a).then(|| match kind {
                    Elementwise::Add | Elementwise::Sub => gd.to_vec(),
                    Elementwise::Mul => broadcast_mul(gd, vb.data()),
                });
                let db: Option<Vec<f64>> = self.requires_grad(*b).then(|| match kind {
                    Elementwise::Add => gd.to_vec(),
                    Elementwise::Sub => gd.iter().map(|v| -v).collect(),
                    Elementwise::Mul => broadcast_mul(gd, va.data()),
                });
                if let Some(da) = da {
                    self.accumulate(grads, *a, reduce_to(da, va.len()));
                }
                if let Some(db) = db {
                    self.accumulate(grads, *b, reduce_to(db, vb.len()));
                }
            }
            Op::Unary(kind, x) => {
                let xv = self.value(*x).data();
                let dx = match kind {
                    Unary::Sigmoid => zip3(gd, out, |g, y| g * y * (1.0 - y)),
                    Unary::Tanh => zip3(gd, out, |g, y| g * (1.0 - y * y)),
                    Unary::Exp => zip3(gd, out, |g, y| g * y),
                    Unary::Log => zip3(gd, xv, |g, x| g / x),
                };
                self.accumulate(grads, *x, dx);
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, gd.iter().map(|g| g * f).collect()),
            Op::Map { x, derivative, .. } => {
                let dx = zip3(gd, self.value(*x).data(), |g, x| g * derivative(x));
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let d = node.value.cols();
                let mut dx = vec![0.0; gd.len()];
                for ((dxr, gr), yr) in dx.chunks_exact_mut(d).zip(gd.chunks_exact(d)).zip(out.chunks_exact(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for j in 0..d {
                        dxr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogSoftmax(x) => {
                let d = node.value.cols();
                let mut dx = vec![0.0; gd.len()];
                for ((dxr, gr), yr) in dx.chunks_exact_mut(d).zip(gd.chunks_exact(d)).zip(out.chunks_exact(d)) {
                    let total: f64 = gr.iter().sum();
                    for j in 0..d {
                        dxr[j] = gr[j] - yr[j].exp() * total;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::MeanRows(x) => {
                let (t, d) = dims2(self.shape(*x));
                let inv = 1.0 / t as f64;
                let mut dx = Vec::with_capacity(t * d);
                for _ in 0..t {
                    dx.extend(gd.iter().map(|g| g * inv));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::MaxRows { x, argmax } => {
                let (t, d) = dims2(self.shape(*x));
                let mut dx = vec![0.0; t * d];
                for (j, &row) in argmax.iter().enumerate() {
                    dx[row * d + j] = gd[j];
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![gd[0]; n]);
            }
            Op::Row { x, index } => {
                let (r, d) = dims2(self.shape(*x));
                let mut dx = vec![0.0; r * d];
                dx[index * d..(index + 1) * d].copy_from_slice(gd);
                self.accumulate(grads, *x, dx);
            }
            Op::StackRows(xs) => {
                let d = node.value.cols();
                for (x, chunk) in xs.iter().zip(gd.chunks_exact(d)) {
                    if self.requires_grad(*x) {
                        self.accumulate(grads, *x, chunk.to_vec());
                    }
                }
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Vec<f64>) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, d) in g.data_mut().iter_mut().zip(delta) {
                    *a += d;
                }
            }
            slot @ None => {
                let shape = self.shape(v).to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient shape mirrors value"));
            }
        }
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, if `v` was reached.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`], with unreached nodes reported as zeros.
    pub fn get_or_zeros(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.shape(v)))
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

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

fn row_wise(x: &Tensor, f: fn(&[f64], &mut [f64])) -> Tensor {
    let d = x.cols();
    let mut out = x.clone();
    for (src, dst) in x.data().chunks_exact(d).zip(out.data_mut().chunks_exact_mut(d)) {
        f(src, dst);
    }
    out
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1])
}

fn zip3(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn broadcast_mul(g: &[f64], other: &[f64]) -> Vec<f64> {
    if other.len() == g.len() {
        zip3(g, other, |g, o| g * o)
    } else {
        let s = other[0];
        g.iter().map(|g| g * s).collect()
    }
}

/// Sums a broadcast gradient back down to a scalar operand.
fn reduce_to(g: Vec<f64>, len: usize) -> Vec<f64> {
    if g.len() == len {
        g
    } else {
        vec![g.iter().sum()]
    }
}

fn transpose_data(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

/// out[m×n] += a[m×k] · b[k×n]
fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×k] += g[m×n] · b[k×n]ᵀ
fn gemm_nt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · g[m×n]
fn gemm_tn(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}
