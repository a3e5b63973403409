//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! A [`Tape`] owns every intermediate value produced during a forward pass.
//! [`Var`] is a cheap `Copy` handle into it. Calling [`Tape::backward`] on a
//! scalar (`1 x 1`) variable replays the tape in reverse and returns the
//! gradient of that scalar with respect to every recorded node.
//!
//! ```
//! use ctxfuse_core::diff::{Matrix, Tape};
//!
//! let tape = Tape::new();
//! let w = tape.leaf(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
//! let loss = w.mul(w).unwrap().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap()[(1, 0)], 6.0);
//! ```

use std::cell::{Ref, RefCell};

use super::matrix::{log_sum_exp, softmax_in_place, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    AddRow(usize, usize),
    AddCol(usize, usize),
    MulCol(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    LogClamp(usize, f64),
    SoftmaxRows(usize),
    LogSumExpRows(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    MeanRows(usize),
    RepeatRows(usize),
    Sum(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    MaskMul(usize, Matrix),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

/// Recording of one forward pass. Confined to a single thread.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var<'_>) -> Option<&Matrix> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zeros when it does not influence the loss.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = v.shape();
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input. Gradients are reported for leaves.
    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input; no gradient flows into it.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    fn push(&self, value: Matrix, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, tracked });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn tracked(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].tracked)
    }

    fn record(&self, value: Matrix, op: Op, parents: &[usize]) -> Var<'_> {
        let tracked = self.tracked(parents);
        self.push(value, op, tracked)
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Matrix> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        if output.shape() != (1, 1) {
            return Err(Error::dim("backward", output.shape(), (1, 1)));
        }
        self.backward_with(output, Matrix::scalar(1.0))
    }

    /// Reverse pass seeded with an arbitrary upstream gradient.
    pub fn backward_with(&self, output: Var<'_>, seed: Matrix) -> Result<Gradients> {
        if seed.shape() != output.shape() {
            return Err(Error::dim("backward seed", seed.shape(), output.shape()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        grads[output.id] = Some(seed);
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.tracked {
                propagate(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], nodes: &[Node], id: usize, g: Matrix) {
    if !nodes[id].tracked {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
    let node = &nodes[id];
    let val = |i: usize| &nodes[i].value;
    let tracked = |i: usize| nodes[i].tracked;
    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::MatMul(a, b) => {
            if tracked(*a) {
                let ga = g.matmul(&val(*b).transpose()).expect("matmul grad");
                accumulate(grads, nodes, *a, ga);
            }
            if tracked(*b) {
                let gb = val(*a).transpose().matmul(g).expect("matmul grad");
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Transpose(a) => accumulate(grads, nodes, *a, g.transpose()),
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.scale(-1.0));
        }
        Op::Mul(a, b) => {
            if tracked(*a) {
                accumulate(grads, nodes, *a, g.hadamard(val(*b)).unwrap());
            }
            if tracked(*b) {
                accumulate(grads, nodes, *b, g.hadamard(val(*a)).unwrap());
            }
        }
        Op::Scale(a, s) => accumulate(grads, nodes, *a, g.scale(*s)),
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g.clone()),
        Op::AddRow(a, r) => {
            accumulate(grads, nodes, *a, g.clone());
            if tracked(*r) {
                let gr = Matrix::from_vec(1, g.cols(), g.col_sums()).unwrap();
                accumulate(grads, nodes, *r, gr);
            }
        }
        Op::AddCol(a, c) => {
            accumulate(grads, nodes, *a, g.clone());
            if tracked(*c) {
                let gc = Matrix::from_vec(g.rows(), 1, g.row_sums()).unwrap();
                accumulate(grads, nodes, *c, gc);
            }
        }
        Op::MulCol(a, c) => {
            let av = val(*a);
            let cv = val(*c);
            if tracked(*a) {
                let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * cv[(i, 0)]);
                accumulate(grads, nodes, *a, ga);
            }
            if tracked(*c) {
                let gc = Matrix::from_fn(g.rows(), 1, |i, _| {
                    g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum()
                });
                accumulate(grads, nodes, *c, gc);
            }
        }
        Op::Sigmoid(a) => {
            let y = &node.value;
            let ga = g.zip_map(y, "sigmoid", |g, y| g * y * (1.0 - y)).unwrap();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Tanh(a) => {
            let y = &node.value;
            let ga = g.zip_map(y, "tanh", |g, y| g * (1.0 - y * y)).unwrap();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Relu(a) => {
            let ga = g.zip_map(val(*a), "relu", |g, x| if x > 0.0 { g } else { 0.0 }).unwrap();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Exp(a) => {
            let ga = g.hadamard(&node.value).unwrap();
            accumulate(grads, nodes, *a, ga);
        }
        Op::LogClamp(a, floor) => {
            let ga = g
                .zip_map(val(*a), "log", |g, x| if x > *floor { g / x } else { 0.0 })
                .unwrap();
            accumulate(grads, nodes, *a, ga);
        }
        Op::SoftmaxRows(a) => {
            let y = &node.value;
            let mut ga = Matrix::zeros(y.rows(), y.cols());
            for i in 0..y.rows() {
                let yr = y.row(i);
                let gr = g.row(i);
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for (o, (yv, gv)) in ga.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                    *o = yv * (gv - dot);
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::LogSumExpRows(a) => {
            let soft = val(*a).softmax_rows();
            let ga = Matrix::from_fn(soft.rows(), soft.cols(), |i, j| g[(i, 0)] * soft[(i, j)]);
            accumulate(grads, nodes, *a, ga);
        }
        Op::ConcatCols(parts) => {
            let mut offset = 0;
            for &p in parts {
                let w = val(p).cols();
                if tracked(p) {
                    accumulate(grads, nodes, p, g.slice_cols(offset, offset + w).unwrap());
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let h = val(p).rows();
                if tracked(p) {
                    let idx: Vec<usize> = (offset..offset + h).collect();
                    accumulate(grads, nodes, p, g.select_rows(&idx));
                }
                offset += h;
            }
        }
        Op::SliceCols(a, start) => {
            let av = val(*a);
            let mut ga = Matrix::zeros(av.rows(), av.cols());
            for i in 0..g.rows() {
                for j in 0..g.cols() {
                    ga[(i, start + j)] = g[(i, j)];
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::MeanRows(a) => {
            let n = val(*a).rows();
            let ga = g.scale(1.0 / n as f64).repeat_rows(n).unwrap();
            accumulate(grads, nodes, *a, ga);
        }
        Op::RepeatRows(a) => {
            let ga = Matrix::from_vec(1, g.cols(), g.col_sums()).unwrap();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Sum(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, nodes, *a, Matrix::filled(r, c, g.value()));
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            normalized,
            inv_std,
        } => {
            let gv = val(*gain);
            if tracked(*gain) {
                let gg = Matrix::from_vec(1, g.cols(), g.hadamard(normalized).unwrap().col_sums()).unwrap();
                accumulate(grads, nodes, *gain, gg);
            }
            if tracked(*bias) {
                let gb = Matrix::from_vec(1, g.cols(), g.col_sums()).unwrap();
                accumulate(grads, nodes, *bias, gb);
            }
            if tracked(*x) {
                let d = g.cols() as f64;
                let mut gx = Matrix::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let xh = normalized.row(i);
                    let dxh: Vec<f64> = g.row(i).iter().zip(gv.row(0)).map(|(a, b)| a * b).collect();
                    let mean_dxh = dxh.iter().sum::<f64>() / d;
                    let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d;
                    for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                        *o = inv_std[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
                accumulate(grads, nodes, *x, gx);
            }
        }
        Op::MaskMul(a, mask) => accumulate(grads, nodes, *a, g.hadamard(mask).unwrap()),
    }
}

/// Variance floor added inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.value_ref(self.id).shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Matrix {
        self.tape.value_ref(self.id).clone()
    }

    /// Borrow the forward value without copying.
    pub fn with_value<R>(&self, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.tape.value_ref(self.id))
    }

    pub fn scalar(&self) -> f64 {
        self.with_value(|m| m.value())
    }

    fn unary(self, op: Op, f: impl FnOnce(&Matrix) -> Matrix) -> Var<'t> {
        let value = f(&self.tape.value_ref(self.id));
        self.tape.record(value, op, &[self.id])
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl FnOnce(&Matrix, &Matrix) -> Result<Matrix>) -> Result<Var<'t>> {
        let value = {
            let a = self.tape.value_ref(self.id);
            let b = self.tape.value_ref(other.id);
            f(&a, &b)?
        };
        Ok(self.tape.record(value, op, &[self.id, other.id]))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| a.matmul(b))
    }

    pub fn t(self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), |a| a.transpose())
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a.add(b))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a.sub(b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a.hadamard(b))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |a| a.scale(s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |a| a.map(|v| v + s))
    }

    /// `1 - self`, elementwise.
    pub fn one_minus(self) -> Var<'t> {
        self.scale(-1.0).add_scalar(1.0)
    }

    /// Adds a `1 x d` row vector to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.binary(row, Op::AddRow(self.id, row.id), |a, r| {
            if r.rows() != 1 || r.cols() != a.cols() {
                return Err(Error::dim("add_row", a.shape(), r.shape()));
            }
            Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] + r[(0, j)]))
        })
    }

    /// Adds an `n x 1` column vector to every column.
    pub fn add_col(self, col: Var<'t>) -> Result<Var<'t>> {
        self.binary(col, Op::AddCol(self.id, col.id), |a, c| {
            if c.cols() != 1 || c.rows() != a.rows() {
                return Err(Error::dim("add_col", a.shape(), c.shape()));
            }
            Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] + c[(i, 0)]))
        })
    }

    /// Scales each row by the matching entry of an `n x 1` column, i.e. the
    /// column is tiled across all feature columns before an elementwise product.
    pub fn mul_col(self, col: Var<'t>) -> Result<Var<'t>> {
        self.binary(col, Op::MulCol(self.id, col.id), |a, c| {
            if c.cols() != 1 || c.rows() != a.rows() {
                return Err(Error::dim("mul_col", a.shape(), c.shape()));
            }
            Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] * c[(i, 0)]))
        })
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |a| a.map(sigmoid))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |a| a.map(f64::tanh))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |a| a.map(|v| v.max(0.0)))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |a| a.map(f64::exp))
    }

    /// `ln(max(x, floor))`; zero gradient where the floor is active.
    pub fn log_clamped(self, floor: f64) -> Var<'t> {
        self.unary(Op::LogClamp(self.id, floor), |a| a.map(|v| v.max(floor).ln()))
    }

    pub fn softmax_rows(self) -> Var<'t> {
        self.unary(Op::SoftmaxRows(self.id), |a| a.softmax_rows())
    }

    /// Row-wise log-sum-exp, producing an `n x 1` column.
    pub fn log_sum_exp_rows(self) -> Var<'t> {
        self.unary(Op::LogSumExpRows(self.id), |a| {
            Matrix::from_fn(a.rows(), 1, |i, _| log_sum_exp(a.row(i)))
        })
    }

    /// Column means as a `1 x d` row.
    pub fn mean_rows(self) -> Var<'t> {
        self.unary(Op::MeanRows(self.id), |a| a.mean_rows())
    }

    /// Stacks a `1 x d` row `n` times.
    pub fn repeat_rows(self, n: usize) -> Result<Var<'t>> {
        let value = self.tape.value_ref(self.id).repeat_rows(n)?;
        Ok(self.tape.record(value, Op::RepeatRows(self.id), &[self.id]))
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |a| Matrix::scalar(a.sum()))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = self.tape.value_ref(self.id).slice_cols(start, end)?;
        Ok(self.tape.record(value, Op::SliceCols(self.id, start), &[self.id]))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask_mul(self, mask: Matrix) -> Result<Var<'t>> {
        let value = self.tape.value_ref(self.id).hadamard(&mask)?;
        Ok(self.tape.record(value, Op::MaskMul(self.id, mask), &[self.id]))
    }

    /// Per-row normalization to zero mean and unit variance, then `gain` and
    /// `bias` (both `1 x d`) applied as an affine map.
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let (value, normalized, inv_std) = {
            let x = self.tape.value_ref(self.id);
            let gv = self.tape.value_ref(gain.id);
            let bv = self.tape.value_ref(bias.id);
            let d = x.cols();
            if gv.shape() != (1, d) {
                return Err(Error::dim("layer_norm gain", x.shape(), gv.shape()));
            }
            if bv.shape() != (1, d) {
                return Err(Error::dim("layer_norm bias", x.shape(), bv.shape()));
            }
            let normalized = normalize_rows(&x);
            let inv_std = (0..x.rows()).map(|i| row_inv_std(x.row(i))).collect::<Vec<_>>();
            let value = Matrix::from_fn(x.rows(), d, |i, j| normalized[(i, j)] * gv[(0, j)] + bv[(0, j)]);
            (value, normalized, inv_std)
        };
        let op = Op::LayerNorm {
            x: self.id,
            gain: gain.id,
            bias: bias.id,
            normalized,
            inv_std,
        };
        Ok(self.tape.record(value, op, &[self.id, gain.id, bias.id]))
    }
}

fn row_inv_std(row: &[f64]) -> f64 {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
    1.0 / (var + LAYER_NORM_EPS).sqrt()
}

/// Row normalization used by layer norm, before the affine map.
pub fn normalize_rows(x: &Matrix) -> Matrix {
    let d = x.cols() as f64;
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / d;
        let inv = row_inv_std(row);
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    out
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Concatenates along the feature axis.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::Input("concat of nothing".into()))?;
    let tape = first.tape;
    let value = {
        let refs: Vec<Ref<'_, Matrix>> = parts.iter().map(|p| tape.value_ref(p.id)).collect();
        let mats: Vec<&Matrix> = refs.iter().map(|r| &**r).collect();
        Matrix::concat_cols(&mats)?
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(tape.record(value, Op::ConcatCols(ids.clone()), &ids))
}

/// Concatenates along the sequence axis.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::Input("concat of nothing".into()))?;
    let tape = first.tape;
    let value = {
        let refs: Vec<Ref<'_, Matrix>> = parts.iter().map(|p| tape.value_ref(p.id)).collect();
        let mats: Vec<&Matrix> = refs.iter().map(|r| &**r).collect();
        Matrix::concat_rows(&mats)?
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(tape.record(value, Op::ConcatRows(ids.clone()), &ids))
}

#[allow(dead_code)]
pub(crate) fn softmax_vec(v: &mut [f64]) {
    softmax_in_place(v)
}
