//! Dense row-major matrices and a reverse-mode gradient tape.
//!
//! Every value in the model is a two-dimensional [`Tensor`]; vectors are
//! `1 × n` and scalars `1 × 1`. Differentiable computation happens on a
//! [`Tape`]: parameters enter as leaves, each primitive appends a node, and
//! [`Tape::backward`] walks the nodes once in reverse to accumulate
//! gradients.
//!
//! ```
//! use thc::tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let w = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
//! let loss = w.mul(w).unwrap().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(w).data(), &[2.0, 4.0, 6.0, 8.0]);
//! ```

use std::cell::{Ref, RefCell};
use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: value {value} outside the domain at flat index {index}")]
    Domain {
        op: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{op}: non-finite input at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("{0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}]", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(TensorError::Contract(format!(
                "tensor of shape {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    pub fn row(values: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(TensorError::Shape {
                op: "from_rows",
                left: (1, cols),
                right: (1, bad.len()),
            });
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a `1 × 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(TensorError::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        gemm_nn(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            &other.data,
            &mut out.data,
        );
        Ok(out)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        check_finite("softmax_rows", self)?;
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols.max(1)) {
            softmax_in_place(row);
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Index of the largest entry in each row; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row_slice(r);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    match t.data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TensorError::NonFinite { op, index }),
        None => Ok(()),
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let xs = x.chunks_exact(4);
    let ys = y.chunks_exact(4);
    let tail: f64 = xs
        .remainder()
        .iter()
        .zip(ys.remainder())
        .map(|(a, b)| a * b)
        .sum();
    for (a, b) in xs.zip(ys) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

// c[m×n] += a[m×k] · b[k×n]
fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

// c[m×n] += a[m×k] · b[n×k]ᵀ
fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

// c[m×n] += a[k×m]ᵀ · b[k×n]
fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += api * bv;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// How the right operand of a binary op lines up with the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Scalar,
}

fn broadcast_of(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Same)
    } else if b.shape() == (1, 1) {
        Ok(Broadcast::Scalar)
    } else if b.rows == 1 && b.cols == a.cols {
        Ok(Broadcast::Row)
    } else {
        Err(TensorError::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        })
    }
}

#[inline]
fn bidx(mode: Broadcast, i: usize, cols: usize) -> usize {
    match mode {
        Broadcast::Same => i,
        Broadcast::Row => i % cols,
        Broadcast::Scalar => 0,
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNT(usize, usize),
    MatMulTN(usize, usize),
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Div(usize, usize, Broadcast),
    Scale(usize, f64),
    AddScalar(usize),
    Log(usize),
    Exp(usize),
    Tanh(usize),
    Gelu(usize),
    Clamp(usize, f64, f64),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    Sum(usize),
    Mean(usize),
    Transpose(usize),
    Reshape(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of one differentiable computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable input: gradients are accumulated for it.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A fixed input: no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.shape() != (1, 1) {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            backprop_node(&nodes, id, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, delta: Tensor) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => {
            for (e, d) in existing.data.iter_mut().zip(&delta.data) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn reduce_to(mode: Broadcast, full: Tensor, target: (usize, usize)) -> Tensor {
    match mode {
        Broadcast::Same => full,
        Broadcast::Scalar => Tensor::scalar(full.data.iter().sum()),
        Broadcast::Row => {
            let mut out = Tensor::zeros(1, target.1);
            for row in full.data.chunks(target.1) {
                for (o, v) in out.data.iter_mut().zip(row) {
                    *o += v;
                }
            }
            out
        }
    }
}

fn backprop_node(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    match nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            let (m, k, n) = (av.rows, av.cols, bv.cols);
            if nodes[a].needs_grad {
                let mut ga = Tensor::zeros(m, k);
                gemm_nt(m, n, k, &g.data, &bv.data, &mut ga.data);
                accumulate(nodes, grads, a, ga);
            }
            if nodes[b].needs_grad {
                let mut gb = Tensor::zeros(k, n);
                gemm_tn(k, m, n, &av.data, &g.data, &mut gb.data);
                accumulate(nodes, grads, b, gb);
            }
        }
        Op::MatMulNT(a, b) => {
            // out = a · bᵀ, a: m×k, b: n×k
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            let (m, k, n) = (av.rows, av.cols, bv.rows);
            if nodes[a].needs_grad {
                let mut ga = Tensor::zeros(m, k);
                gemm_nn(m, n, k, &g.data, &bv.data, &mut ga.data);
                accumulate(nodes, grads, a, ga);
            }
            if nodes[b].needs_grad {
                let mut gb = Tensor::zeros(n, k);
                gemm_tn(n, m, k, &g.data, &av.data, &mut gb.data);
                accumulate(nodes, grads, b, gb);
            }
        }
        Op::MatMulTN(a, b) => {
            // out = aᵀ · b, a: k×m, b: k×n
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            let (k, m, n) = (av.rows, av.cols, bv.cols);
            if nodes[a].needs_grad {
                let mut ga = Tensor::zeros(k, m);
                gemm_nt(k, n, m, &bv.data, &g.data, &mut ga.data);
                accumulate(nodes, grads, a, ga);
            }
            if nodes[b].needs_grad {
                let mut gb = Tensor::zeros(k, n);
                gemm_nn(k, m, n, &av.data, &g.data, &mut gb.data);
                accumulate(nodes, grads, b, gb);
            }
        }
        Op::Add(a, b, mode) | Op::Sub(a, b, mode) => {
            let sign = if matches!(nodes[id].op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if nodes[a].needs_grad {
                accumulate(nodes, grads, a, g.clone());
            }
            if nodes[b].needs_grad {
                let full = g.map(|v| sign * v);
                let gb = reduce_to(mode, full, nodes[b].value.shape());
                accumulate(nodes, grads, b, gb);
            }
        }
        Op::Mul(a, b, mode) => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            let cols = av.cols;
            if nodes[a].needs_grad {
                let mut ga = g.clone();
                for (i, v) in ga.data.iter_mut().enumerate() {
                    *v *= bv.data[bidx(mode, i, cols)];
                }
                accumulate(nodes, grads, a, ga);
            }
            if nodes[b].needs_grad {
                let mut full = g.clone();
                for (v, x) in full.data.iter_mut().zip(&av.data) {
                    *v *= x;
                }
                accumulate(nodes, grads, b, reduce_to(mode, full, bv.shape()));
            }
        }
        Op::Div(a, b, mode) => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            let cols = av.cols;
            if nodes[a].needs_grad {
                let mut ga = g.clone();
                for (i, v) in ga.data.iter_mut().enumerate() {
                    *v /= bv.data[bidx(mode, i, cols)];
                }
                accumulate(nodes, grads, a, ga);
            }
            if nodes[b].needs_grad {
                let mut full = g.clone();
                for (i, v) in full.data.iter_mut().enumerate() {
                    let d = bv.data[bidx(mode, i, cols)];
                    *v *= -av.data[i] / (d * d);
                }
                accumulate(nodes, grads, b, reduce_to(mode, full, bv.shape()));
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, a, g.map(|v| c * v)),
        Op::AddScalar(a) | Op::Reshape(a) => {
            let shape = nodes[a].value.shape();
            accumulate(
                nodes,
                grads,
                a,
                Tensor {
                    rows: shape.0,
                    cols: shape.1,
                    data: g.data.clone(),
                },
            );
        }
        Op::Log(a) => {
            let mut ga = g.clone();
            for (v, x) in ga.data.iter_mut().zip(&nodes[a].value.data) {
                *v /= x;
            }
            accumulate(nodes, grads, a, ga);
        }
        Op::Exp(a) => {
            let mut ga = g.clone();
            for (v, y) in ga.data.iter_mut().zip(&out.data) {
                *v *= y;
            }
            accumulate(nodes, grads, a, ga);
        }
        Op::Tanh(a) => {
            let mut ga = g.clone();
            for (v, y) in ga.data.iter_mut().zip(&out.data) {
                *v *= 1.0 - y * y;
            }
            accumulate(nodes, grads, a, ga);
        }
        Op::Gelu(a) => {
            let mut ga = g.clone();
            for (v, &x) in ga.data.iter_mut().zip(&nodes[a].value.data) {
                *v *= gelu_grad(x);
            }
            accumulate(nodes, grads, a, ga);
        }
        Op::Clamp(a, lo, hi) => {
            let mut ga = g.clone();
            for (v, &x) in ga.data.iter_mut().zip(&nodes[a].value.data) {
                if !(lo..=hi).contains(&x) {
                    *v = 0.0;
                }
            }
            accumulate(nodes, grads, a, ga);
        }
        Op::SoftmaxRows(a) => {
            let cols = out.cols.max(1);
            let mut ga = g.clone();
            for (grow, yrow) in ga.data.chunks_mut(cols).zip(out.data.chunks(cols)) {
                let inner: f64 = grow.iter().zip(yrow).map(|(gv, y)| gv * y).sum();
                for (gv, y) in grow.iter_mut().zip(yrow) {
                    *gv = y * (*gv - inner);
                }
            }
            accumulate(nodes, grads, a, ga);
        }
        Op::LogSoftmaxRows(a) => {
            let cols = out.cols.max(1);
            let mut ga = g.clone();
            for (grow, yrow) in ga.data.chunks_mut(cols).zip(out.data.chunks(cols)) {
                let total: f64 = grow.iter().sum();
                for (gv, y) in grow.iter_mut().zip(yrow) {
                    *gv -= y.exp() * total;
                }
            }
            accumulate(nodes, grads, a, ga);
        }
        Op::Sum(a) | Op::Mean(a) => {
            let (r, c) = nodes[a].value.shape();
            let scale = if matches!(nodes[id].op, Op::Mean(_)) {
                1.0 / (r * c) as f64
            } else {
                1.0
            };
            accumulate(nodes, grads, a, Tensor::filled(r, c, g.item() * scale));
        }
        Op::Transpose(a) => accumulate(nodes, grads, a, g.transpose()),
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when unreachable.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.grads.get(var.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = var.shape();
                Tensor::zeros(r, c)
            }
        }
    }

    /// Moves the gradient out, leaving zeros behind.
    pub fn take(&mut self, var: Var<'_>) -> Tensor {
        match self.grads.get_mut(var.id).and_then(Option::take) {
            Some(g) => g,
            None => {
                let (r, c) = var.shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'t> {
        let out = f(&self.value());
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(out, op, needs)
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    fn matmul_generic(
        &self,
        other: Var<'t>,
        op_name: &'static str,
        dims: impl FnOnce((usize, usize), (usize, usize)) -> Option<(usize, usize, usize)>,
        kernel: fn(usize, usize, usize, &[f64], &[f64], &mut [f64]),
        op: Op,
        out_shape: impl FnOnce(usize, usize, usize) -> (usize, usize),
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let out = {
            let (a, b) = (self.value(), other.value());
            let Some((m, k, n)) = dims(a.shape(), b.shape()) else {
                return Err(TensorError::Shape {
                    op: op_name,
                    left: a.shape(),
                    right: b.shape(),
                });
            };
            let (r, c) = out_shape(m, k, n);
            let mut out = Tensor::zeros(r, c);
            kernel(m, k, n, &a.data, &b.data, &mut out.data);
            out
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(out, op, needs))
    }

    /// `self · other`.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_generic(
            other,
            "matmul",
            |(m, k), (k2, n)| (k == k2).then_some((m, k, n)),
            gemm_nn,
            Op::MatMul(self.id, other.id),
            |m, _, n| (m, n),
        )
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_generic(
            other,
            "matmul_nt",
            |(m, k), (n, k2)| (k == k2).then_some((m, k, n)),
            gemm_nt,
            Op::MatMulNT(self.id, other.id),
            |m, _, n| (m, n),
        )
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_generic(
            other,
            "matmul_tn",
            |(k, m), (k2, n)| (k == k2).then_some((m, k, n)),
            gemm_tn,
            Op::MatMulTN(self.id, other.id),
            |m, _, n| (m, n),
        )
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        make: fn(usize, usize, Broadcast) -> Op,
        f: impl Fn(f64, f64) -> f64,
        check: Option<fn(f64) -> bool>,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (out, mode) = {
            let (a, b) = (self.value(), other.value());
            let mode = broadcast_of(name, &a, &b)?;
            if let Some(ok) = check {
                if let Some(index) = b.data.iter().position(|&v| !ok(v)) {
                    return Err(TensorError::Domain {
                        op: name,
                        index,
                        value: b.data[index],
                    });
                }
            }
            let cols = a.cols;
            let data = a
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data[bidx(mode, i, cols)]))
                .collect();
            (
                Tensor {
                    rows: a.rows,
                    cols: a.cols,
                    data,
                },
                mode,
            )
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(out, make(self.id, other.id, mode), needs))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add, |a, b| a + b, None)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b, None)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b, None)
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div, |a, b| a / b, Some(|b| b != 0.0))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |a| a.map(|v| c * v))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |a| a.map(|v| v + c))
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&self) -> Result<Var<'t>> {
        {
            let a = self.value();
            if let Some(index) = a.data.iter().position(|&v| !(v > 0.0)) {
                return Err(TensorError::Domain {
                    op: "log",
                    index,
                    value: a.data[index],
                });
            }
        }
        Ok(self.unary(Op::Log(self.id), |a| a.map(f64::ln)))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |a| a.map(f64::exp))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |a| a.map(f64::tanh))
    }

    /// Tanh-approximated GELU; smooth everywhere.
    pub fn gelu(&self) -> Var<'t> {
        self.unary(Op::Gelu(self.id), |a| a.map(gelu))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |a| a.map(|v| v.clamp(lo, hi)))
    }

    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let out = self.value().softmax_rows()?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::SoftmaxRows(self.id), needs))
    }

    pub fn log_softmax_rows(&self) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            check_finite("log_softmax_rows", &a)?;
            let mut out = a.clone();
            for row in out.data.chunks_mut(a.cols.max(1)) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                for v in row.iter_mut() {
                    *v -= lse;
                }
            }
            out
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(out, Op::LogSoftmaxRows(self.id), needs))
    }

    pub fn sum(&self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |a| Tensor::scalar(a.sum()))
    }

    pub fn mean(&self) -> Var<'t> {
        self.unary(Op::Mean(self.id), |a| Tensor::scalar(a.sum() / a.len() as f64))
    }

    pub fn transpose(&self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), Tensor::transpose)
    }

    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let len = self.value().len();
        if rows * cols != len {
            return Err(TensorError::Shape {
                op: "reshape",
                left: self.shape(),
                right: (rows, cols),
            });
        }
        Ok(self.unary(Op::Reshape(self.id), |a| Tensor {
            rows,
            cols,
            data: a.data.clone(),
        }))
    }

    /// Row-major flatten to `1 × n`.
    pub fn flatten(&self) -> Var<'t> {
        let len = self.value().len();
        self.unary(Op::Reshape(self.id), |a| Tensor {
            rows: 1,
            cols: len,
            data: a.data.clone(),
        })
    }
}

/// Sums a nonempty list of same-shape vars left to right.
pub fn sum_vars<'t>(vars: &[Var<'t>]) -> Result<Var<'t>> {
    let (first, rest) = vars
        .split_first()
        .ok_or_else(|| TensorError::Contract("sum of an empty list".into()))?;
    rest.iter().try_fold(*first, |acc, v| acc.add(*v))
}

/// Arithmetic mean of a nonempty list of same-shape vars.
pub fn mean_vars<'t>(vars: &[Var<'t>]) -> Result<Var<'t>> {
    Ok(sum_vars(vars)?.scale(1.0 / vars.len() as f64))
}
