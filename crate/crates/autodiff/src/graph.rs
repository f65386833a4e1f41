//! Append-only operation tape with reverse-mode differentiation.
//!
//! Nodes are only ever appended and may only reference earlier nodes, so
//! the node order is already a topological order and `backward` is a single
//! reverse sweep.

use std::collections::HashMap;

use crate::tensor::dot;
use crate::{Gradients, ParamId, ParamStore, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Exp(Var),
    LogFloor(Var, f64),
    Abs(Var),
    NormalizeRows(Var, Vec<f64>),
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<(usize, usize)>),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Affine(..) => "affine",
            Op::Transpose(_) => "transpose",
            Op::SoftmaxRows(_) => "softmax",
            Op::LogSoftmaxRows(_) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(_) => "gelu",
            Op::Exp(_) => "exp",
            Op::LogFloor(..) => "log",
            Op::Abs(_) => "abs",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::SumAll(_) => "sum",
            Op::MeanAll(_) => "mean",
            Op::MeanRows(_) => "mean_rows",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::Gather(..) => "gather",
            Op::Reshape(_) => "reshape",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    check_finite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            check_finite: true,
        }
    }

    /// Disables the per-op finiteness scan.
    pub fn without_finite_checks(mut self) -> Self {
        self.check_finite = false;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rc(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var, TensorError> {
        let node = self.nodes.len();
        if self.check_finite && !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name(), node });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(node))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        let node = self.nodes.len();
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(node)
    }

    /// Leaf for a trainable parameter. Repeated requests share one node, so
    /// gradient contributions from every use are summed.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let node = self.nodes.len();
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        self.params.insert(id, Var(node));
        Var(node)
    }

    /// Leaf for a parameter whose value is used but never differentiated.
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.constant(store.get(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMulNt(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// Adds a `[1, c]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (r, c) = self.rc(a);
        let rv = self.value(row);
        if rv.len() != c {
            return Err(TensorError::Shape {
                op: "add_row",
                left: self.shape(a).to_vec(),
                right: rv.shape().to_vec(),
            });
        }
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, b) in chunk.iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        let value = Tensor::matrix(r, c, data)?;
        let rg = self.needs(a) || self.needs(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var, TensorError> {
        let value = self.value(a).map(|x| scale * x + shift);
        let rg = self.needs(a);
        self.push(value, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var, TensorError> {
        self.affine(a, scale, 0.0)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, TensorError> {
        self.affine(a, -1.0, 0.0)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).transpose();
        let rg = self.needs(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).softmax_rows()?;
        let rg = self.needs(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        if !x.is_finite() {
            return Err(TensorError::NonFiniteInput { op: "log_softmax" });
        }
        let c = x.cols();
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.needs(a);
        self.push(value, Op::LogSoftmaxRows(a), rg)
    }

    /// Row-wise layer normalization with population variance, followed by
    /// the affine map `gain ⊙ x̂ + bias` (`gain`, `bias` are `[1, c]`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let (r, c) = self.rc(x);
        if c < 2 {
            return Err(TensorError::InvalidShape(self.shape(x).to_vec()));
        }
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.len() != c || bv.len() != c {
            return Err(TensorError::Shape {
                op: "layer_norm",
                left: self.shape(x).to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let xv = self.value(x);
        let mut normalized = vec![0.0; r * c];
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = xv.row_slice(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let denom = var + eps;
            let is = if denom > 0.0 { 1.0 / denom.sqrt() } else { 0.0 };
            inv_std.push(is);
            for j in 0..c {
                let n = (row[j] - mean) * is;
                normalized[i * c + j] = n;
                out[i * c + j] = n * gv.data()[j] + bv.data()[j];
            }
        }
        let normalized = Tensor::matrix(r, c, normalized)?;
        let value = Tensor::matrix(r, c, out)?;
        let rg = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        )
    }

    /// Gaussian-error linear unit, tanh form.
    pub fn gelu(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        let rg = self.needs(a);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(f64::exp);
        let rg = self.needs(a);
        self.push(value, Op::Exp(a), rg)
    }

    /// `ln(max(a, floor))`; the gradient is zero where the floor is active.
    pub fn log_floor(&mut self, a: Var, floor: f64) -> Result<Var, TensorError> {
        let value = self.value(a).map(|x| x.max(floor).ln());
        let rg = self.needs(a);
        self.push(value, Op::LogFloor(a, floor), rg)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).map(f64::abs);
        let rg = self.needs(a);
        self.push(value, Op::Abs(a), rg)
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        let c = x.cols();
        let mut data = x.data().to_vec();
        let mut norms = Vec::with_capacity(x.rows());
        for row in data.chunks_mut(c) {
            let n = dot(row, row).sqrt().max(1e-12);
            norms.push(n);
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.needs(a);
        self.push(value, Op::NormalizeRows(a, norms), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.needs(a);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.needs(a);
        self.push(value, Op::MeanAll(a), rg)
    }

    /// Column means, `[r, c] -> [1, c]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, c) = self.rc(a);
        let mut out = vec![0.0; c];
        for row in self.value(a).data().chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        let value = Tensor::row(out)?;
        let rg = self.needs(a);
        self.push(value, Op::MeanRows(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty { op: "concat_rows" })?;
        let c = self.rc(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    left: self.shape(first).to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::matrix(rows, c, data)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty { op: "concat_cols" })?;
        let r = self.rc(first).0;
        for &p in parts {
            if self.rc(p).0 != r {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.rc(p).1).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let value = Tensor::matrix(r, total, data)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (r, c) = self.rc(a);
        if start >= end || end > r {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: end,
                shape: self.shape(a).to_vec(),
            });
        }
        let data = self.value(a).data()[start * c..end * c].to_vec();
        let value = Tensor::matrix(end - start, c, data)?;
        let rg = self.needs(a);
        self.push(value, Op::SliceRows(a, start), rg)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let (r, c) = self.rc(a);
        if start >= end || end > c {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: end,
                shape: self.shape(a).to_vec(),
            });
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&t.row_slice(i)[start..end]);
        }
        let value = Tensor::matrix(r, end - start, data)?;
        let rg = self.needs(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    /// Picks the listed `(row, col)` entries into a `[k, 1]` column.
    pub fn gather(&mut self, a: Var, indices: Vec<(usize, usize)>) -> Result<Var, TensorError> {
        let (r, c) = self.rc(a);
        if indices.is_empty() {
            return Err(TensorError::Empty { op: "gather" });
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(indices.len());
        for &(i, j) in &indices {
            if i >= r || j >= c {
                return Err(TensorError::Index {
                    op: "gather",
                    index: i * c + j,
                    shape: t.shape().to_vec(),
                });
            }
            data.push(t.get(i, j));
        }
        let value = Tensor::column(data)?;
        let rg = self.needs(a);
        self.push(value, Op::Gather(a, indices), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.needs(a);
        self.push(value, Op::Reshape(a), rg)
    }

    /// Reverse sweep from a scalar `loss`. Returns fresh gradient
    /// accumulators for every parameter the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.insert(*id, g),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.matmul_nt(self.value(*b))?;
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).matmul_tn(&g)?;
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::MatMulNt(a, b) => {
                    if self.needs(*a) {
                        let ga = g.matmul(self.value(*b))?;
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = g.matmul_tn(self.value(*a))?;
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.map(|v| -v));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.zip_map(self.value(*b), "mul", |x, y| x * y)?;
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = g.zip_map(self.value(*a), "mul", |x, y| x * y)?;
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let c = g.cols();
                        let mut acc = vec![0.0; c];
                        for chunk in g.data().chunks(c) {
                            for (o, v) in acc.iter_mut().zip(chunk) {
                                *o += v;
                            }
                        }
                        let shape = self.shape(*row).to_vec();
                        accumulate(&mut grads, *row, Tensor::new(shape, acc)?);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Affine(a, scale) => {
                    let s = *scale;
                    accumulate(&mut grads, *a, g.map(|v| v * s));
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut dx = vec![0.0; y.len()];
                    for ((d, yr), gr) in dx.chunks_mut(c).zip(y.data().chunks(c)).zip(g.data().chunks(c)) {
                        let inner = dot(yr, gr);
                        for j in 0..c {
                            d[j] = yr[j] * (gr[j] - inner);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(y.shape().to_vec(), dx)?);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut dx = vec![0.0; y.len()];
                    for ((d, yr), gr) in dx.chunks_mut(c).zip(y.data().chunks(c)).zip(g.data().chunks(c)) {
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            d[j] = gr[j] - yr[j].exp() * total;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(y.shape().to_vec(), dx)?);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let c = normalized.cols();
                    let r = normalized.rows();
                    let gv = self.value(*gain).data();
                    if self.needs(*gain) || self.needs(*bias) {
                        let mut dg = vec![0.0; c];
                        let mut db = vec![0.0; c];
                        for i in 0..r {
                            for j in 0..c {
                                dg[j] += g.data()[i * c + j] * normalized.data()[i * c + j];
                                db[j] += g.data()[i * c + j];
                            }
                        }
                        if self.needs(*gain) {
                            let shape = self.shape(*gain).to_vec();
                            accumulate(&mut grads, *gain, Tensor::new(shape, dg)?);
                        }
                        if self.needs(*bias) {
                            let shape = self.shape(*bias).to_vec();
                            accumulate(&mut grads, *bias, Tensor::new(shape, db)?);
                        }
                    }
                    if self.needs(*x) {
                        let mut dx = vec![0.0; r * c];
                        for i in 0..r {
                            let nrow = normalized.row_slice(i);
                            let grow = &g.data()[i * c..(i + 1) * c];
                            let mut mean_d = 0.0;
                            let mut mean_dn = 0.0;
                            for j in 0..c {
                                let d = grow[j] * gv[j];
                                mean_d += d;
                                mean_dn += d * nrow[j];
                            }
                            mean_d /= c as f64;
                            mean_dn /= c as f64;
                            for j in 0..c {
                                let d = grow[j] * gv[j];
                                dx[i * c + j] = inv_std[i] * (d - mean_d - nrow[j] * mean_dn);
                            }
                        }
                        let shape = self.shape(*x).to_vec();
                        accumulate(&mut grads, *x, Tensor::new(shape, dx)?);
                    }
                }
                Op::Gelu(a) => {
                    let dx = g.zip_map(self.value(*a), "gelu", |gv, x| {
                        let u = GELU_C * (x + GELU_A * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        gv * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })?;
                    accumulate(&mut grads, *a, dx);
                }
                Op::Exp(a) => {
                    let dx = g.zip_map(&node.value, "exp", |gv, y| gv * y)?;
                    accumulate(&mut grads, *a, dx);
                }
                Op::LogFloor(a, floor) => {
                    let f = *floor;
                    let dx = g.zip_map(self.value(*a), "log", |gv, x| if x > f { gv / x } else { 0.0 })?;
                    accumulate(&mut grads, *a, dx);
                }
                Op::Abs(a) => {
                    let dx = g.zip_map(self.value(*a), "abs", |gv, x| {
                        if x > 0.0 {
                            gv
                        } else if x < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads, *a, dx);
                }
                Op::NormalizeRows(a, norms) => {
                    let y = &node.value;
                    let c = y.cols();
                    let mut dx = vec![0.0; y.len()];
                    for (i, ((d, yr), gr)) in dx
                        .chunks_mut(c)
                        .zip(y.data().chunks(c))
                        .zip(g.data().chunks(c))
                        .enumerate()
                    {
                        let inner = dot(yr, gr);
                        for j in 0..c {
                            d[j] = (gr[j] - yr[j] * inner) / norms[i];
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(y.shape().to_vec(), dx)?);
                }
                Op::SumAll(a) => {
                    let shape = self.shape(*a).to_vec();
                    let n: usize = shape.iter().product();
                    accumulate(&mut grads, *a, Tensor::new(shape, vec![g.item(); n])?);
                }
                Op::MeanAll(a) => {
                    let shape = self.shape(*a).to_vec();
                    let n: usize = shape.iter().product();
                    accumulate(&mut grads, *a, Tensor::new(shape, vec![g.item() / n as f64; n])?);
                }
                Op::MeanRows(a) => {
                    let (r, c) = self.rc(*a);
                    let mut dx = Vec::with_capacity(r * c);
                    for _ in 0..r {
                        dx.extend(g.data().iter().map(|v| v / r as f64));
                    }
                    let shape = self.shape(*a).to_vec();
                    accumulate(&mut grads, *a, Tensor::new(shape, dx)?);
                }
                Op::ConcatRows(parts) => {
                    let c = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.rc(p).0;
                        if self.needs(p) {
                            let data = g.data()[offset * c..(offset + rows) * c].to_vec();
                            let shape = self.shape(p).to_vec();
                            accumulate(&mut grads, p, Tensor::new(shape, data)?);
                        }
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let r = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.rc(p).1;
                        if self.needs(p) {
                            let mut data = Vec::with_capacity(r * w);
                            for i in 0..r {
                                data.extend_from_slice(&g.row_slice(i)[offset..offset + w]);
                            }
                            let shape = self.shape(p).to_vec();
                            accumulate(&mut grads, p, Tensor::new(shape, data)?);
                        }
                        offset += w;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.rc(*a);
                    let mut dx = vec![0.0; r * c];
                    dx[start * c..start * c + g.len()].copy_from_slice(g.data());
                    let shape = self.shape(*a).to_vec();
                    accumulate(&mut grads, *a, Tensor::new(shape, dx)?);
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.rc(*a);
                    let w = g.cols();
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        dx[i * c + start..i * c + start + w].copy_from_slice(g.row_slice(i));
                    }
                    let shape = self.shape(*a).to_vec();
                    accumulate(&mut grads, *a, Tensor::new(shape, dx)?);
                }
                Op::Gather(a, indices) => {
                    let (r, c) = self.rc(*a);
                    let mut dx = vec![0.0; r * c];
                    for (k, &(i, j)) in indices.iter().enumerate() {
                        dx[i * c + j] += g.data()[k];
                    }
                    let shape = self.shape(*a).to_vec();
                    accumulate(&mut grads, *a, Tensor::new(shape, dx)?);
                }
                Op::Reshape(a) => {
                    let shape = self.shape(*a).to_vec();
                    accumulate(&mut grads, *a, g.reshape(shape)?);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
