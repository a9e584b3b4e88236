//! Reverse-mode tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters enter the
//! tape through [`Graph::param`], which reads the current value from a
//! [`ParamStore`]; frozen parameters enter as constants so no gradient work
//! is spent on them. Shape mismatches are programming errors and panic.

use std::collections::HashMap;

use crate::matrix::dot;
use crate::{Matrix, ParamId, ParamStore};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LAYER_NORM_EPS: f64 = 1e-5;
const NORM_FLOOR: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Gelu(Var),
    Tanh(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    MeanRows(Var),
    Sum(Var),
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    /// Scalar-valued function whose local gradients were computed in the
    /// forward pass.
    Scalar { parents: Vec<Var>, local: Vec<Matrix> },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// A single forward/backward tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every trainable parameter that took part in the forward
    /// pass, ordered by parameter id.
    pub fn param_grads(&self) -> Vec<(ParamId, Matrix)> {
        let mut out: Vec<(ParamId, Matrix)> = self
            .params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].clone().map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant input; never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient but is not tied to a parameter.
    /// Used by gradient checks on intermediate quantities.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// The current value of a stored parameter. Each parameter gets a single
    /// node per graph so its gradient accumulates in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, store.is_trainable(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_bt(self.value(b));
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMulBt(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// `a + row` with `row` (1 × n) broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "add_row expects a 1x{n} row");
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..m {
            for (x, b) in value.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, row]);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// `a ∘ row` with `row` (1 × n) broadcast over every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "mul_row expects a 1x{n} row");
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..m {
            for (x, b) in value.row_mut(i).iter_mut().zip(&r) {
                *x *= b;
            }
        }
        let rg = self.rg(&[a, row]);
        self.push(value, Op::MulRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                z += *x;
            }
            row.iter_mut().for_each(|x| *x /= z);
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::Softmax(a), rg)
    }

    /// Row-wise standardization (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = x.shape();
        let mut value = Matrix::zeros(m, n);
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in value.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::LayerNorm { x: a, inv_std }, rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        let rg = self.rg(&[a]);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let rg = self.rg(parts);
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                value.row_mut(i)[offset..offset + v.cols()].copy_from_slice(v.row(i));
            }
            offset += v.cols();
        }
        let rg = self.rg(parts);
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_rows(start, len);
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceRows { x: a, start }, rg)
    }

    pub fn row(&mut self, a: Var, index: usize) -> Var {
        self.slice_rows(a, index, 1)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "column slice out of range");
        let mut value = Matrix::zeros(x.rows(), len);
        for i in 0..x.rows() {
            value.row_mut(i).copy_from_slice(&x.row(i)[start..start + len]);
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::SliceCols { x: a, start }, rg)
    }

    /// Column-wise mean over rows, giving a `1 × n` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = x.shape();
        assert!(m > 0, "mean of zero rows");
        let mut value = Matrix::zeros(1, n);
        for i in 0..m {
            for (o, v) in value.row_mut(0).iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        let value = value.scale(1.0 / m as f64);
        let rg = self.rg(&[a]);
        self.push(value, Op::MeanRows(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let n = dot(x.row(i), x.row(i)).sqrt().max(NORM_FLOOR);
            value.row_mut(i).iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::L2NormalizeRows { x: a, norms }, rg)
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let value = self.value(table).select_rows(ids);
        let rg = self.rg(&[table]);
        self.push(value, Op::Gather { table, ids: ids.to_vec() }, rg)
    }

    /// Records a scalar function `f(parents)` whose value and local gradients
    /// `∂f/∂parent` were computed outside the tape.
    pub fn scalar_fn(&mut self, parents: &[Var], value: f64, local: Vec<Matrix>) -> Var {
        assert_eq!(parents.len(), local.len(), "one local gradient per parent");
        for (p, l) in parents.iter().zip(&local) {
            assert_eq!(self.shape(*p), l.shape(), "local gradient shape mismatch");
        }
        let rg = self.rg(parents);
        self.push(Matrix::scalar(value), Op::Scalar { parents: parents.to_vec(), local }, rg)
    }

    /// Back-propagates from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.propagate(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Gradients { grads, params }
    }

    fn propagate(&self, idx: usize, dy: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    accumulate(grads, *a, dy.matmul_bt(self.value(*b)));
                }
                if self.requires_grad(*b) {
                    accumulate(grads, *b, self.value(*a).matmul_at(dy));
                }
            }
            Op::MatMulBt(a, b) => {
                if self.requires_grad(*a) {
                    accumulate(grads, *a, dy.matmul(self.value(*b)));
                }
                if self.requires_grad(*b) {
                    accumulate(grads, *b, dy.matmul_at(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.acc_if(grads, *a, || dy.clone());
                self.acc_if(grads, *b, || dy.clone());
            }
            Op::Sub(a, b) => {
                self.acc_if(grads, *a, || dy.clone());
                self.acc_if(grads, *b, || dy.scale(-1.0));
            }
            Op::Mul(a, b) => {
                self.acc_if(grads, *a, || dy.zip_map(self.value(*b), |g, v| g * v));
                self.acc_if(grads, *b, || dy.zip_map(self.value(*a), |g, v| g * v));
            }
            Op::AddRow(a, row) => {
                self.acc_if(grads, *a, || dy.clone());
                self.acc_if(grads, *row, || column_sums(dy));
            }
            Op::MulRow(a, row) => {
                let r = self.value(*row);
                self.acc_if(grads, *a, || {
                    let mut g = dy.clone();
                    for i in 0..g.rows() {
                        for (x, b) in g.row_mut(i).iter_mut().zip(r.data()) {
                            *x *= b;
                        }
                    }
                    g
                });
                self.acc_if(grads, *row, || column_sums(&dy.zip_map(self.value(*a), |g, v| g * v)));
            }
            Op::Scale(a, s) => self.acc_if(grads, *a, || dy.scale(*s)),
            Op::Softmax(a) => self.acc_if(grads, *a, || {
                let mut g = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let s = dot(dy.row(i), y.row(i));
                    for ((o, &p), &d) in g.row_mut(i).iter_mut().zip(y.row(i)).zip(dy.row(i)) {
                        *o = p * (d - s);
                    }
                }
                g
            }),
            Op::LayerNorm { x, inv_std } => self.acc_if(grads, *x, || {
                let n = y.cols() as f64;
                let mut g = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let d = dy.row(i);
                    let xh = y.row(i);
                    let mean_d = d.iter().sum::<f64>() / n;
                    let mean_dx = dot(d, xh) / n;
                    for ((o, &di), &xi) in g.row_mut(i).iter_mut().zip(d).zip(xh) {
                        *o = inv_std[i] * (di - mean_d - xi * mean_dx);
                    }
                }
                g
            }),
            Op::Gelu(a) => self.acc_if(grads, *a, || {
                let x = self.value(*a);
                x.zip_map(dy, |x, d| {
                    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                    d * (0.5 * (1.0 + t) + 0.5 * x * dt)
                })
            }),
            Op::Tanh(a) => self.acc_if(grads, *a, || y.zip_map(dy, |t, d| d * (1.0 - t * t))),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    if self.requires_grad(p) {
                        accumulate(grads, p, dy.slice_rows(offset, rows));
                    }
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.requires_grad(p) {
                        let mut g = Matrix::zeros(rows, cols);
                        for i in 0..rows {
                            g.row_mut(i).copy_from_slice(&dy.row(i)[offset..offset + cols]);
                        }
                        accumulate(grads, p, g);
                    }
                    offset += cols;
                }
            }
            Op::SliceRows { x, start } => self.acc_if(grads, *x, || {
                let (rows, cols) = self.shape(*x);
                let mut g = Matrix::zeros(rows, cols);
                for i in 0..dy.rows() {
                    g.row_mut(start + i).copy_from_slice(dy.row(i));
                }
                g
            }),
            Op::SliceCols { x, start } => self.acc_if(grads, *x, || {
                let (rows, cols) = self.shape(*x);
                let mut g = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    g.row_mut(i)[*start..start + dy.cols()].copy_from_slice(dy.row(i));
                }
                g
            }),
            Op::MeanRows(a) => self.acc_if(grads, *a, || {
                let (rows, cols) = self.shape(*a);
                let mut g = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    for (o, d) in g.row_mut(i).iter_mut().zip(dy.row(0)) {
                        *o = d / rows as f64;
                    }
                }
                g
            }),
            Op::Sum(a) => self.acc_if(grads, *a, || {
                let (rows, cols) = self.shape(*a);
                Matrix::filled(rows, cols, dy.item())
            }),
            Op::L2NormalizeRows { x, norms } => self.acc_if(grads, *x, || {
                let mut g = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let yd = dot(y.row(i), dy.row(i));
                    for ((o, &yi), &di) in g.row_mut(i).iter_mut().zip(y.row(i)).zip(dy.row(i)) {
                        *o = (di - yi * yd) / norms[i];
                    }
                }
                g
            }),
            Op::Gather { table, ids } => self.acc_if(grads, *table, || {
                let (rows, cols) = self.shape(*table);
                let mut g = Matrix::zeros(rows, cols);
                for (k, &id) in ids.iter().enumerate() {
                    for (o, d) in g.row_mut(id).iter_mut().zip(dy.row(k)) {
                        *o += d;
                    }
                }
                g
            }),
            Op::Scalar { parents, local } => {
                let up = dy.item();
                for (p, l) in parents.iter().zip(local) {
                    self.acc_if(grads, *p, || l.scale(up));
                }
            }
        }
    }

    fn acc_if(&self, grads: &mut [Option<Matrix>], v: Var, g: impl FnOnce() -> Matrix) {
        if self.requires_grad(v) {
            accumulate(grads, v, g());
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        for (o, v) in out.row_mut(0).iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out
}
