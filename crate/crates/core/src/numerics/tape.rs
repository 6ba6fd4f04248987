//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every operation computes its value eagerly and appends a node; node inputs
//! always have smaller indices, so the tape is topologically ordered by
//! construction and [`Tape::backward`] is a single reverse sweep.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::numerics::tensor::{gemm_nn, gemm_nt, gemm_tn};
use crate::numerics::{ParamId, ParamSet, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product for an operation defined outside this module.
pub trait CustomOp<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradient contributions for each input given the upstream gradient.
    /// `None` means "no contribution".
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    MatMulTN(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddColBroadcast(Var, Var),
    AddRowBroadcast(Var, Var),
    MulColBroadcast(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSumExp(Var),
    Sum(Var),
    SegmentMaxCols { x: Var, argmax: Vec<usize> },
    Gather { table: Var, idx: Vec<usize> },
    Windows { x: Var, width: usize, starts: Vec<usize> },
    SoftmaxXent { logits: Var, targets: Vec<usize> },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::MatMulTN(..) => "matmul_tn",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddColBroadcast(..) => "add_col_broadcast",
            Op::AddRowBroadcast(..) => "add_row_broadcast",
            Op::MulColBroadcast(..) => "mul_col_broadcast",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LogSumExp(..) => "log_sum_exp",
            Op::Sum(..) => "sum",
            Op::SegmentMaxCols { .. } => "max_pool",
            Op::Gather { .. } => "embedding_lookup",
            Op::Windows { .. } => "windows",
            Op::SoftmaxXent { .. } => "softmax_cross_entropy",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Variables bound to the entries of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Result of a backward sweep.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for every bound parameter, in parameter order.
    pub fn params(&self, binding: &Binding) -> Vec<Tensor<T>> {
        binding.vars.iter().map(|&v| self.get(v)).collect()
    }
}

/// Records operations for one forward pass. Single-threaded; build a new tape per step.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_same(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(1024) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), op, needs_grad)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// Binds every parameter as a borrowed leaf; frozen parameters get no gradient.
    pub fn bind(&mut self, params: &'a ParamSet<T>) -> Binding {
        let vars = params
            .iter()
            .map(|(_, p)| self.push(Cow::Borrowed(&p.value), Op::Leaf, p.trainable))
            .collect();
        Binding { vars }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.val(a), self.val(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        if bv.rows() != k {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", av.shape(), bv.shape())));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(av.data(), bv.data(), &mut out, m, k, n);
        Ok(self.push_op(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.val(a), self.val(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        if bv.cols() != k {
            return Err(Error::Shape(format!("matmul_nt {:?} x {:?}ᵀ", av.shape(), bv.shape())));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(av.data(), bv.data(), &mut out, m, k, n);
        Ok(self.push_op(Tensor::from_parts(vec![m, n], out), Op::MatMulNT(a, b), &[a, b]))
    }

    /// `aᵀ · b`
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.val(a), self.val(b));
        let (k, m, n) = (av.rows(), av.cols(), bv.cols());
        if bv.rows() != k {
            return Err(Error::Shape(format!("matmul_tn {:?}ᵀ x {:?}", av.shape(), bv.shape())));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_tn(av.data(), bv.data(), &mut out, m, k, n);
        Ok(self.push_op(Tensor::from_parts(vec![m, n], out), Op::MatMulTN(a, b), &[a, b]))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.val(a), self.val(b));
        check_same(av.shape(), bv.shape(), what)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(av.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push_op(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push_op(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.val(x).map(|v| v * s);
        self.push_op(out, Op::Scale(x, s), &[x])
    }

    /// `x[i, j] + v[i]` (bias added to every column).
    pub fn add_col_broadcast(&mut self, x: Var, v: Var) -> Result<Var> {
        let (xv, vv) = (self.val(x), self.val(v));
        let (m, n) = (xv.rows(), xv.cols());
        if vv.len() != m {
            return Err(Error::Shape(format!("column broadcast {:?} + {:?}", xv.shape(), vv.shape())));
        }
        let mut out = xv.data().to_vec();
        for i in 0..m {
            let b = vv.data()[i];
            for o in &mut out[i * n..(i + 1) * n] {
                *o += b;
            }
        }
        Ok(self.push_op(Tensor::from_parts(xv.shape().to_vec(), out), Op::AddColBroadcast(x, v), &[x, v]))
    }

    /// `x[i, j] + v[j]` (vector added to every row).
    pub fn add_row_broadcast(&mut self, x: Var, v: Var) -> Result<Var> {
        let (xv, vv) = (self.val(x), self.val(v));
        let (m, n) = (xv.rows(), xv.cols());
        if vv.len() != n {
            return Err(Error::Shape(format!("row broadcast {:?} + {:?}", xv.shape(), vv.shape())));
        }
        let mut out = xv.data().to_vec();
        for i in 0..m {
            for (o, &b) in out[i * n..(i + 1) * n].iter_mut().zip(vv.data()) {
                *o += b;
            }
        }
        Ok(self.push_op(Tensor::from_parts(xv.shape().to_vec(), out), Op::AddRowBroadcast(x, v), &[x, v]))
    }

    /// `x[i, j] * v[i]`.
    pub fn mul_col_broadcast(&mut self, x: Var, v: Var) -> Result<Var> {
        let (xv, vv) = (self.val(x), self.val(v));
        let (m, n) = (xv.rows(), xv.cols());
        if vv.len() != m {
            return Err(Error::Shape(format!("column scale {:?} * {:?}", xv.shape(), vv.shape())));
        }
        let mut out = xv.data().to_vec();
        for i in 0..m {
            let s = vv.data()[i];
            for o in &mut out[i * n..(i + 1) * n] {
                *o *= s;
            }
        }
        Ok(self.push_op(Tensor::from_parts(xv.shape().to_vec(), out), Op::MulColBroadcast(x, v), &[x, v]))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.val(x).map(T::tanh);
        self.push_op(out, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.val(x).map(sigmoid);
        self.push_op(out, Op::Sigmoid(x), &[x])
    }

    /// Stacks matrices vertically; all inputs need the same column count.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let cols = self.val(*first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &x in xs {
            let v = self.val(x);
            if v.cols() != cols {
                return Err(Error::Shape(format!("concat_rows: {} vs {} columns", v.cols(), cols)));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        Ok(self.push_op(Tensor::from_parts(vec![rows, cols], data), Op::ConcatRows(xs.to_vec()), xs))
    }

    /// Places matrices side by side; all inputs need the same row count.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let rows = self.val(*first).rows();
        let mut total = 0;
        for &x in xs {
            let v = self.val(x);
            if v.rows() != rows {
                return Err(Error::Shape(format!("concat_cols: {} vs {} rows", v.rows(), rows)));
            }
            total += v.cols();
        }
        let mut data = vec![T::zero(); rows * total];
        let mut offset = 0;
        for &x in xs {
            let v = self.val(x);
            let c = v.cols();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + c].copy_from_slice(v.row(r));
            }
            offset += c;
        }
        Ok(self.push_op(Tensor::from_parts(vec![rows, total], data), Op::ConcatCols(xs.to_vec()), xs))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.val(x);
        if len == 0 || start + len > v.rows() {
            return Err(Error::Shape(format!("slice_rows {start}+{len} of {:?}", v.shape())));
        }
        let c = v.cols();
        let data = v.data()[start * c..(start + len) * c].to_vec();
        Ok(self.push_op(Tensor::from_parts(vec![len, c], data), Op::SliceRows(x, start), &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.val(x);
        let (r, c) = (v.rows(), v.cols());
        if len == 0 || start + len > c {
            return Err(Error::Shape(format!("slice_cols {start}+{len} of {:?}", v.shape())));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&v.data()[i * c + start..i * c + start + len]);
        }
        Ok(self.push_op(Tensor::from_parts(vec![r, len], data), Op::SliceCols(x, start), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.val(x).clone().reshape(shape)?;
        Ok(self.push_op(out, Op::Reshape(x), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.val(x).transpose();
        self.push_op(out, Op::Transpose(x), &[x])
    }

    /// Softmax over the columns of each row.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = self.val(x);
        let (m, n) = (v.rows(), v.cols());
        let mut out = v.data().to_vec();
        for i in 0..m {
            softmax_in_place(&mut out[i * n..(i + 1) * n]);
        }
        let out = Tensor::from_parts(v.shape().to_vec(), out);
        self.push_op(out, Op::SoftmaxRows(x), &[x])
    }

    /// `ln Σ exp(x)` over all entries.
    pub fn log_sum_exp(&mut self, x: Var) -> Var {
        let out = crate::numerics::log_sum_exp(self.val(x).data().iter().copied());
        self.push_op(Tensor::scalar(out), Op::LogSumExp(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = self.val(x).sum();
        self.push_op(Tensor::scalar(out), Op::Sum(x), &[x])
    }

    /// Row-wise maximum over all columns: `[m, n] -> [m, 1]`.
    pub fn max_pool_cols(&mut self, x: Var) -> Result<Var> {
        let n = self.val(x).cols();
        self.segment_max_cols(x, &[n])
    }

    /// Row-wise maximum over consecutive column segments of the given lengths:
    /// `[m, Σ lens] -> [m, lens.len()]`. Ties route to the first maximal column.
    pub fn segment_max_cols(&mut self, x: Var, lens: &[usize]) -> Result<Var> {
        let v = self.val(x);
        let (m, n) = (v.rows(), v.cols());
        if lens.iter().sum::<usize>() != n || lens.contains(&0) {
            return Err(Error::Shape(format!("segments {lens:?} do not tile {n} columns")));
        }
        let s = lens.len();
        let mut out = vec![T::zero(); m * s];
        let mut argmax = vec![0usize; m * s];
        for i in 0..m {
            let row = v.row(i);
            let mut start = 0;
            for (k, &len) in lens.iter().enumerate() {
                let mut best = start;
                for j in start + 1..start + len {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                out[i * s + k] = row[best];
                argmax[i * s + k] = best;
                start += len;
            }
        }
        let out = Tensor::from_parts(vec![m, s], out);
        Ok(self.push_op(out, Op::SegmentMaxCols { x, argmax }, &[x]))
    }

    /// Embedding lookup: column `t` of the result is row `idx[t]` of `table`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tv = self.val(table);
        let (v, d) = (tv.rows(), tv.cols());
        if idx.is_empty() {
            return Err(Error::Shape("empty lookup".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
            return Err(Error::Shape(format!("lookup index {bad} out of range {v}")));
        }
        let n = idx.len();
        let mut out = vec![T::zero(); d * n];
        for (t, &i) in idx.iter().enumerate() {
            for (r, &val) in tv.row(i).iter().enumerate() {
                out[r * n + t] = val;
            }
        }
        let out = Tensor::from_parts(vec![d, n], out);
        Ok(self.push_op(out, Op::Gather { table, idx: idx.to_vec() }, &[table]))
    }

    /// Sliding windows (im2col): output column `k` stacks columns
    /// `starts[k] .. starts[k] + width` of `x: [d, n]` into a `[width·d]` vector.
    pub fn windows(&mut self, x: Var, width: usize, starts: &[usize]) -> Result<Var> {
        let v = self.val(x);
        let (d, n) = (v.rows(), v.cols());
        if width == 0 || starts.is_empty() || starts.iter().any(|&s| s + width > n) {
            return Err(Error::Shape(format!("windows of width {width} exceed {n} columns")));
        }
        let k = starts.len();
        let mut out = vec![T::zero(); width * d * k];
        for (col, &s) in starts.iter().enumerate() {
            for o in 0..width {
                for r in 0..d {
                    out[(o * d + r) * k + col] = v.data()[r * n + s + o];
                }
            }
        }
        let out = Tensor::from_parts(vec![width * d, k], out);
        Ok(self.push_op(out, Op::Windows { x, width, starts: starts.to_vec() }, &[x]))
    }

    /// Summed cross-entropy of per-column softmax distributions:
    /// `Σ_t −ln softmax(logits[:, t])[targets[t]]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let v = self.val(logits);
        let (l, n) = (v.rows(), v.cols());
        if targets.len() != n || targets.iter().any(|&t| t >= l) {
            return Err(Error::Shape(format!("{} targets for logits {:?}", targets.len(), v.shape())));
        }
        let mut loss = T::zero();
        for (t, &y) in targets.iter().enumerate() {
            let lse = crate::numerics::log_sum_exp((0..l).map(|r| v.at(r, t)));
            loss += lse - v.at(y, t);
        }
        let op = Op::SoftmaxXent { logits, targets: targets.to_vec() };
        Ok(self.push_op(Tensor::scalar(loss), op, &[logits]))
    }

    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        self.push_op(output, Op::Custom { inputs: inputs.to_vec(), op }, inputs)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        if loss.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!("loss node {} not on tape", loss.0)));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::NonScalarLoss(shapes[loss.0].clone()));
        }
        if let Some(i) = self.nodes[..=loss.0].iter().position(|n| n.value.has_nan()) {
            return Err(Error::NonFinite { node: i, op: self.nodes[i].op.name() });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&shapes[loss.0], T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.as_ref();
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if let Some(ga) = slot(nodes, grads, *a) {
                    gemm_nt(g.data(), bv.data(), ga.data_mut(), m, n, k);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    gemm_tn(av.data(), g.data(), gb.data_mut(), k, m, n);
                }
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if let Some(ga) = slot(nodes, grads, *a) {
                    gemm_nn(g.data(), bv.data(), ga.data_mut(), m, n, k);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    gemm_tn(g.data(), av.data(), gb.data_mut(), n, m, k);
                }
            }
            Op::MatMulTN(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (k, m, n) = (av.rows(), av.cols(), bv.cols());
                if let Some(ga) = slot(nodes, grads, *a) {
                    gemm_nt(bv.data(), g.data(), ga.data_mut(), k, n, m);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    gemm_nn(av.data(), g.data(), gb.data_mut(), k, m, n);
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    gb.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for (o, &v) in gb.data_mut().iter_mut().zip(g.data()) {
                        *o -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((o, &gv), &bx) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *o += gv * bx;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for ((o, &gv), &ax) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += gv * ax;
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (o, &gv) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o += gv * *s;
                    }
                }
            }
            Op::AddColBroadcast(x, v) => {
                let n = g.cols();
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.add_assign(g);
                }
                if let Some(gv) = slot(nodes, grads, *v) {
                    for (i, o) in gv.data_mut().iter_mut().enumerate() {
                        *o += g.data()[i * n..(i + 1) * n].iter().copied().sum::<T>();
                    }
                }
            }
            Op::AddRowBroadcast(x, v) => {
                let (m, n) = (g.rows(), g.cols());
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.add_assign(g);
                }
                if let Some(gv) = slot(nodes, grads, *v) {
                    for r in 0..m {
                        for (o, &gval) in gv.data_mut().iter_mut().zip(&g.data()[r * n..(r + 1) * n]) {
                            *o += gval;
                        }
                    }
                }
            }
            Op::MulColBroadcast(x, v) => {
                let (xv, vv) = (self.val(*x), self.val(*v));
                let n = g.cols();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (i, row) in gx.data_mut().chunks_mut(n).enumerate() {
                        let s = vv.data()[i];
                        for (o, &gval) in row.iter_mut().zip(&g.data()[i * n..(i + 1) * n]) {
                            *o += gval * s;
                        }
                    }
                }
                if let Some(gv) = slot(nodes, grads, *v) {
                    for (i, o) in gv.data_mut().iter_mut().enumerate() {
                        let gr = &g.data()[i * n..(i + 1) * n];
                        let xr = &xv.data()[i * n..(i + 1) * n];
                        *o += gr.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((o, &gv), &yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * (T::one() - yv * yv);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((o, &gv), &yv) in gx.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * yv * (T::one() - yv);
                    }
                }
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let len = self.val(x).len();
                    if let Some(gx) = slot(nodes, grads, x) {
                        for (o, &gv) in gx.data_mut().iter_mut().zip(&g.data()[offset..offset + len]) {
                            *o += gv;
                        }
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(xs) => {
                let total = g.cols();
                let mut offset = 0;
                for &x in xs {
                    let c = self.val(x).cols();
                    if let Some(gx) = slot(nodes, grads, x) {
                        for (r, row) in gx.data_mut().chunks_mut(c).enumerate() {
                            let src = &g.data()[r * total + offset..r * total + offset + c];
                            for (o, &gv) in row.iter_mut().zip(src) {
                                *o += gv;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceRows(x, start) => {
                let c = g.cols();
                if let Some(gx) = slot(nodes, grads, *x) {
                    let dst = &mut gx.data_mut()[start * c..start * c + g.len()];
                    for (o, &gv) in dst.iter_mut().zip(g.data()) {
                        *o += gv;
                    }
                }
            }
            Op::SliceCols(x, start) => {
                let len = g.cols();
                let c = self.val(*x).cols();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for r in 0..g.rows() {
                        let dst = &mut gx.data_mut()[r * c + start..r * c + start + len];
                        for (o, &gv) in dst.iter_mut().zip(&g.data()[r * len..(r + 1) * len]) {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (o, &gv) in gx.data_mut().iter_mut().zip(g.data()) {
                        *o += gv;
                    }
                }
            }
            Op::Transpose(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.add_assign(&g.transpose());
                }
            }
            Op::SoftmaxRows(x) => {
                let n = g.cols();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (i, row) in gx.data_mut().chunks_mut(n).enumerate() {
                        let yr = &y.data()[i * n..(i + 1) * n];
                        let gr = &g.data()[i * n..(i + 1) * n];
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((o, &yv), &gv) in row.iter_mut().zip(yr).zip(gr) {
                            *o += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::LogSumExp(x) => {
                let (xv, out, gs) = (self.val(*x), y.data()[0], g.data()[0]);
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (o, &v) in gx.data_mut().iter_mut().zip(xv.data()) {
                        *o += gs * (v - out).exp();
                    }
                }
            }
            Op::Sum(x) => {
                let gs = g.data()[0];
                if let Some(gx) = slot(nodes, grads, *x) {
                    for o in gx.data_mut() {
                        *o += gs;
                    }
                }
            }
            Op::SegmentMaxCols { x, argmax } => {
                let n = self.val(*x).cols();
                let s = g.cols();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (k, &j) in argmax.iter().enumerate() {
                        let row = k / s;
                        gx.data_mut()[row * n + j] += g.data()[k];
                    }
                }
            }
            Op::Gather { table, idx } => {
                let n = idx.len();
                if let Some(gt) = slot(nodes, grads, *table) {
                    let d = gt.cols();
                    for (t, &row) in idx.iter().enumerate() {
                        let dst = &mut gt.data_mut()[row * d..(row + 1) * d];
                        for (r, o) in dst.iter_mut().enumerate() {
                            *o += g.data()[r * n + t];
                        }
                    }
                }
            }
            Op::Windows { x, width, starts } => {
                let (d, n) = (self.val(*x).rows(), self.val(*x).cols());
                let k = starts.len();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (col, &s) in starts.iter().enumerate() {
                        for o in 0..*width {
                            for r in 0..d {
                                gx.data_mut()[r * n + s + o] += g.data()[(o * d + r) * k + col];
                            }
                        }
                    }
                }
            }
            Op::SoftmaxXent { logits, targets } => {
                let v = self.val(*logits);
                let (l, n) = (v.rows(), v.cols());
                let gs = g.data()[0];
                if let Some(gl) = slot(nodes, grads, *logits) {
                    for (t, &target) in targets.iter().enumerate() {
                        let lse = crate::numerics::log_sum_exp((0..l).map(|r| v.at(r, t)));
                        for r in 0..l {
                            let p = (v.at(r, t) - lse).exp();
                            let onehot = if r == target { T::one() } else { T::zero() };
                            gl.data_mut()[r * n + t] += gs * (p - onehot);
                        }
                    }
                }
            }
            Op::Custom { inputs, op } => {
                let input_vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.val(v)).collect();
                let contribs = op.backward(&input_vals, y, g);
                for (&v, c) in inputs.iter().zip(contribs) {
                    if let (Some(c), Some(gv)) = (c, slot(nodes, grads, v)) {
                        gv.add_assign(&c);
                    }
                }
            }
        }
    }
}

/// Accumulator for input `v`, or None when `v` needs no gradient.
fn slot<'g, T: Scalar>(nodes: &[Node<'_, T>], grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut Tensor<T>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape())))
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
