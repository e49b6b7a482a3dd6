//! The recording tape and its reverse sweep.
//!
//! Every operation appends one node holding its value and the ids of its
//! inputs. Node ids are assigned in creation order, so a node can only refer
//! to nodes with smaller ids and a single descending sweep over ids visits
//! the graph in reverse topological order.

use std::rc::Rc;

use crate::matrix::{gemm, Matrix};
use crate::TapeError;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Constant sparse row mixing: `out[r] = Σ_e weight[e] · input[col[e]]` for
/// `e` in `offsets[r]..offsets[r + 1]`.
#[derive(Clone, Debug)]
pub struct RowMix {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    input_rows: usize,
}

impl RowMix {
    pub fn new(input_rows: usize) -> Self {
        Self {
            offsets: vec![0],
            cols: Vec::new(),
            weights: Vec::new(),
            input_rows,
        }
    }

    /// Appends one output row built from `(input_row, weight)` terms.
    pub fn push_row(&mut self, terms: impl IntoIterator<Item = (usize, f64)>) {
        for (c, w) in terms {
            assert!(c < self.input_rows, "row mix index {c} out of {}", self.input_rows);
            self.cols.push(c);
            self.weights.push(w);
        }
        self.offsets.push(self.cols.len());
    }

    pub fn output_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn input_rows(&self) -> usize {
        self.input_rows
    }

    pub fn row_terms(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    /// Applies the mix to a plain matrix.
    pub fn apply(&self, input: &Matrix) -> Matrix {
        assert_eq!(input.rows(), self.input_rows, "row mix input rows");
        let cols = input.cols();
        let mut out = Matrix::zeros(self.output_rows(), cols);
        for r in 0..self.output_rows() {
            let dst = r * cols;
            for (c, w) in self.row_terms(r) {
                let src = input.row(c);
                let o = &mut out.data_mut()[dst..dst + cols];
                for (o, s) in o.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        out
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Silu(Var),
    Exp(Var),
    Sin(Var),
    Cos(Var),
    Gather(Var, Rc<Vec<usize>>),
    Mix(Var, Rc<RowMix>),
    GroupSoftmax(Var, usize),
    GroupSum(Var, usize),
    GroupMax(Var, Vec<usize>),
    Concat(Vec<Var>),
    Slice(Var, usize),
    SumAll(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// A tape of matrix operations supporting one or more reverse sweeps.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the output w.r.t. `v`, or `None` when `v` does not
    /// influence the output or was recorded as a constant.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a differentiable leaf.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, what: &str) -> Matrix {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "{what}: shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Matrix::from_vec(x.rows(), x.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |p, q| p + q, "add");
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |p, q| p - q, "sub");
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |p, q| p * q, "mul");
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    /// Adds the 1xC row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (x, r) = (self.value(a), self.value(b));
        assert_eq!(r.rows(), 1, "add_row: bias must be a single row");
        assert_eq!(x.cols(), r.cols(), "add_row: column mismatch");
        let mut v = x.clone();
        let cols = x.cols();
        for chunk in v.data_mut().chunks_exact_mut(cols.max(1)) {
            for (o, b) in chunk.iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::AddRow(a, b), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `x · w + b` with `b` a single row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.rg(a);
        self.push(v, Op::Silu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(v, Op::Exp(a), rg)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sin);
        let rg = self.rg(a);
        self.push(v, Op::Sin(a), rg)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::cos);
        let rg = self.rg(a);
        self.push(v, Op::Cos(a), rg)
    }

    /// `out[r] = a[index[r]]`.
    pub fn gather_rows(&mut self, a: Var, index: Rc<Vec<usize>>) -> Var {
        let x = self.value(a);
        let cols = x.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            data.extend_from_slice(x.row(i));
        }
        let v = Matrix::from_vec(index.len(), cols, data);
        let rg = self.rg(a);
        self.push(v, Op::Gather(a, index), rg)
    }

    pub fn mix_rows(&mut self, a: Var, mix: Rc<RowMix>) -> Var {
        let v = mix.apply(self.value(a));
        let rg = self.rg(a);
        self.push(v, Op::Mix(a, mix), rg)
    }

    /// Softmax over each consecutive block of `k` rows, independently per
    /// column.
    pub fn group_softmax(&mut self, a: Var, k: usize) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        assert!(k > 0 && rows % k == 0, "group_softmax: {rows} rows not divisible by {k}");
        let mut v = Matrix::zeros(rows, cols);
        let src = x.data();
        let dst = v.data_mut();
        for g in 0..rows / k {
            let base = g * k * cols;
            for c in 0..cols {
                let mut m = f64::NEG_INFINITY;
                for j in 0..k {
                    m = m.max(src[base + j * cols + c]);
                }
                let mut s = 0.0;
                for j in 0..k {
                    let e = (src[base + j * cols + c] - m).exp();
                    dst[base + j * cols + c] = e;
                    s += e;
                }
                for j in 0..k {
                    dst[base + j * cols + c] /= s;
                }
            }
        }
        let rg = self.rg(a);
        self.push(v, Op::GroupSoftmax(a, k), rg)
    }

    /// Sums each consecutive block of `k` rows.
    pub fn group_sum(&mut self, a: Var, k: usize) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        assert!(k > 0 && rows % k == 0, "group_sum: {rows} rows not divisible by {k}");
        let mut v = Matrix::zeros(rows / k, cols);
        for g in 0..rows / k {
            let out = v.row_mut(g);
            for j in 0..k {
                for (o, s) in out.iter_mut().zip(x.row(g * k + j)) {
                    *o += s;
                }
            }
        }
        let rg = self.rg(a);
        self.push(v, Op::GroupSum(a, k), rg)
    }

    /// Columnwise maximum over each consecutive block of `k` rows. Ties keep
    /// the earliest row.
    pub fn group_max(&mut self, a: Var, k: usize) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        assert!(k > 0 && rows % k == 0, "group_max: {rows} rows not divisible by {k}");
        let groups = rows / k;
        let mut v = Matrix::zeros(groups, cols);
        let mut arg = vec![0usize; groups * cols];
        for g in 0..groups {
            for c in 0..cols {
                let mut best = g * k;
                for j in 1..k {
                    if x.get(g * k + j, c) > x.get(best, c) {
                        best = g * k + j;
                    }
                }
                v.set(g, c, x.get(best, c));
                arg[g * cols + c] = best;
            }
        }
        let rg = self.rg(a);
        self.push(v, Op::GroupMax(a, arg), rg)
    }

    /// Concatenates along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut v = Matrix::zeros(rows, total);
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let x = self.value(p);
            assert_eq!(x.rows(), rows, "concat_cols: row mismatch");
            for r in 0..rows {
                v.row_mut(r)[off..off + w].copy_from_slice(x.row(r));
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(v, Op::Concat(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "slice_cols out of range");
        let mut v = Matrix::zeros(x.rows(), len);
        for r in 0..x.rows() {
            v.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        let rg = self.rg(a);
        self.push(v, Op::Slice(a, start), rg)
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean over rows of the squared row norm.
    pub fn mean_sq_rows(&mut self, a: Var) -> Var {
        let rows = self.value(a).rows().max(1) as f64;
        let sq = self.mul(a, a);
        let s = self.sum_all(sq);
        self.scale(s, 1.0 / rows)
    }

    /// Reverse sweep from a 1x1 node.
    pub fn backward(&self, output: Var) -> Result<Gradients, TapeError> {
        let shape = self.value(output).shape();
        if shape != (1, 1) {
            return Err(TapeError::NonScalarOutput {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[output.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(Matrix::scalar(1.0));
        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                self.acc(grads, *a, || hadamard(g, self.value(*b)));
                self.acc(grads, *b, || hadamard(g, self.value(*a)));
            }
            Op::Scale(a, c) => self.acc(grads, *a, || g.map(|x| x * c)),
            Op::AddRow(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || {
                    let mut s = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in s.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    s
                });
            }
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let bv = self.value(*b);
                    let slot = slot(grads, *a, self.value(*a));
                    gemm(g, false, bv, true, slot, 1.0);
                }
                if self.rg(*b) {
                    let av = self.value(*a);
                    let slot = slot(grads, *b, self.value(*b));
                    gemm(av, true, g, false, slot, 1.0);
                }
            }
            Op::Silu(a) => self.acc(grads, *a, || {
                let x = self.value(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &g)| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                Matrix::from_vec(x.rows(), x.cols(), data)
            }),
            Op::Exp(a) => self.acc(grads, *a, || hadamard(g, &node.value)),
            Op::Sin(a) => self.acc(grads, *a, || hadamard(g, &self.value(*a).map(f64::cos))),
            Op::Cos(a) => self.acc(grads, *a, || hadamard(g, &self.value(*a).map(|x| -x.sin()))),
            Op::Gather(a, index) => {
                if self.rg(*a) {
                    let cols = g.cols();
                    let slot = slot(grads, *a, self.value(*a));
                    for (r, &i) in index.iter().enumerate() {
                        let dst = &mut slot.data_mut()[i * cols..(i + 1) * cols];
                        for (o, v) in dst.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Mix(a, mix) => {
                if self.rg(*a) {
                    let cols = g.cols();
                    let slot = slot(grads, *a, self.value(*a));
                    for r in 0..mix.output_rows() {
                        let src = g.row(r);
                        for (c, w) in mix.row_terms(r) {
                            let dst = &mut slot.data_mut()[c * cols..(c + 1) * cols];
                            for (o, v) in dst.iter_mut().zip(src) {
                                *o += w * v;
                            }
                        }
                    }
                }
            }
            Op::GroupSoftmax(a, k) => self.acc(grads, *a, || {
                let y = &node.value;
                let (rows, cols) = y.shape();
                let mut out = Matrix::zeros(rows, cols);
                for grp in 0..rows / k {
                    let base = grp * k;
                    for c in 0..cols {
                        let mut dot = 0.0;
                        for j in 0..*k {
                            dot += y.get(base + j, c) * g.get(base + j, c);
                        }
                        for j in 0..*k {
                            let yj = y.get(base + j, c);
                            out.set(base + j, c, yj * (g.get(base + j, c) - dot));
                        }
                    }
                }
                out
            }),
            Op::GroupSum(a, k) => self.acc(grads, *a, || {
                let x = self.value(*a);
                let mut out = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    out.row_mut(r).copy_from_slice(g.row(r / k));
                }
                out
            }),
            Op::GroupMax(a, arg) => {
                if self.rg(*a) {
                    let cols = g.cols();
                    let slot = slot(grads, *a, self.value(*a));
                    for (e, &src_row) in arg.iter().enumerate() {
                        let c = e % cols;
                        slot.data_mut()[src_row * cols + c] += g.data()[e];
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.acc(grads, p, || {
                        let mut out = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            out.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        out
                    });
                    off += w;
                }
            }
            Op::Slice(a, start) => {
                if self.rg(*a) {
                    let w = g.cols();
                    let slot = slot(grads, *a, self.value(*a));
                    for r in 0..g.rows() {
                        let dst = &mut slot.row_mut(r)[*start..*start + w];
                        for (o, v) in dst.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                let s = g.item();
                self.acc(grads, *a, || {
                    let x = self.value(*a);
                    Matrix::filled(x.rows(), x.cols(), s)
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Matrix>], v: Var, contribution: impl FnOnce() -> Matrix) {
        if !self.rg(v) {
            return;
        }
        let c = contribution();
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&c),
            slot @ None => *slot = Some(c),
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Matrix>], v: Var, like: &Matrix) -> &'a mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(like.rows(), like.cols()))
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
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
