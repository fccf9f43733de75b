//! Wengert-list autodiff. Ops are appended in execution order, so node ids
//! are already a topological order and backward is a single reverse sweep.

use super::kernels::{gelu, gelu_grad, gemm_nn, gemm_nt, gemm_tn, sigmoid};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::counter_uniform;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Op discriminant, used to address a backward rule (see [`Fault`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    MatMulT,
    Add,
    Sub,
    Mul,
    Scale,
    Sigmoid,
    Gelu,
    Softmax,
    LayerNorm,
    Mean,
    Concat,
    Slice,
    Gather,
    Dropout,
    CrossEntropy,
    Mse,
}

/// Scales the gradient flowing through every op of one kind. Only useful
/// as a negative control for gradient checking.
#[derive(Clone, Copy, Debug)]
pub struct Fault {
    pub op: OpKind,
    pub factor: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Scalar,
}

enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    MatMulT { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize, bc: Bcast },
    Sub { a: usize, b: usize, bc: Bcast },
    Mul { a: usize, b: usize, bc: Bcast },
    Scale { a: usize, c: T },
    Sigmoid { a: usize },
    Gelu { a: usize },
    Softmax { a: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<T>, inv_std: Vec<T> },
    MeanRows { a: usize },
    MeanCols { a: usize },
    ConcatRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    SliceRows { a: usize, start: usize },
    SliceCols { a: usize, start: usize },
    Gather { table: usize, indices: Vec<usize> },
    Dropout { a: usize, mask: Vec<T> },
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Vec<T> },
    Mse { pred: usize, targets: Vec<T> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::MatMulT { .. } => OpKind::MatMulT,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Mul { .. } => OpKind::Mul,
            Op::Scale { .. } => OpKind::Scale,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Gelu { .. } => OpKind::Gelu,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::MeanRows { .. } | Op::MeanCols { .. } => OpKind::Mean,
            Op::ConcatRows { .. } | Op::ConcatCols { .. } => OpKind::Concat,
            Op::SliceRows { .. } | Op::SliceCols { .. } => OpKind::Slice,
            Op::Gather { .. } => OpKind::Gather,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Mse { .. } => OpKind::Mse,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. One tape per forward pass; tapes are not shared
/// between threads.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    dropout_seed: u64,
    dropout_counter: u64,
    fault: Option<Fault>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; zeros if `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}

fn shape2(rows: usize, cols: usize) -> Vec<usize> {
    vec![rows, cols]
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            dropout_seed: 0,
            dropout_counter: 0,
            fault: None,
        }
    }

    /// Sets the counter-based dropout stream. The counter restarts at zero.
    pub fn set_dropout_seed(&mut self, seed: u64) {
        self.dropout_seed = seed;
        self.dropout_counter = 0;
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(shape2(m, n), out)?,
            Op::MatMul { a: a.0, b: b.0, m, k, n },
            rg,
        ))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(self.shape_err("matmul_t", a, b));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(shape2(m, n), out)?,
            Op::MatMulT { a: a.0, b: b.0, m, k, n },
            rg,
        ))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let ta = self.value(a);
        let tb = self.value(b);
        if ta.shape() == tb.shape() {
            Ok(Bcast::Same)
        } else if tb.numel() == 1 {
            Ok(Bcast::Scalar)
        } else if tb.numel() == ta.cols() && tb.rows() == 1 {
            Ok(Bcast::Row)
        } else {
            Err(self.shape_err(op, a, b))
        }
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, Bcast)> {
        let bc = self.bcast(op, a, b)?;
        let ta = self.value(a);
        let tb = self.value(b).data();
        let cols = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match bc {
                    Bcast::Same => tb[i],
                    Bcast::Row => tb[i % cols],
                    Bcast::Scalar => tb[0],
                };
                f(x, y)
            })
            .collect();
        Ok((Tensor::new(ta.shape().to_vec(), data)?, bc))
    }

    /// Element-wise sum; `b` may match `a`, be a row vector over the last
    /// axis, or be a single value.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add { a: a.0, b: b.0, bc }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub { a: a.0, b: b.0, bc }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul { a: a.0, b: b.0, bc }, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x * c).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Scale { a: a.0, c }, rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.unary(a, sigmoid);
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid { a: a.0 }, rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.unary(a, gelu);
        let rg = self.rg(a);
        self.push(t, Op::Gelu { a: a.0 }, rg)
    }

    /// Row-wise softmax, stabilized by subtracting each row's max.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (rows, cols) = (ta.rows(), ta.cols());
        let mut out = ta.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(t, Op::Softmax { a: a.0 }, rg)
    }

    /// Per-row normalization to zero mean and unit variance, then an affine
    /// map by `gain` and `bias` (both of length `cols`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = (tx.rows(), tx.cols());
        if self.value(gain).numel() != cols {
            return Err(self.shape_err("layer_norm gain", x, gain));
        }
        if self.value(bias).numel() != cols {
            return Err(self.shape_err("layer_norm bias", x, bias));
        }
        if eps <= 0.0 {
            return Err(Error::contract("layer_norm eps must be positive"));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let eps = T::of(eps);
        let n = T::of(cols as f64);
        let mut xhat = vec![T::zero(); rows * cols];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Mean over `axis`: 0 collapses rows (→ `[1, cols]`), 1 collapses
    /// columns (→ `[rows, 1]`).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let (rows, cols) = (ta.rows(), ta.cols());
        let rg = self.rg(a);
        match axis {
            0 => {
                let mut out = vec![T::zero(); cols];
                for r in 0..rows {
                    for (o, &v) in out.iter_mut().zip(ta.row(r)) {
                        *o = *o + v;
                    }
                }
                let inv = T::one() / T::of(rows as f64);
                out.iter_mut().for_each(|o| *o = *o * inv);
                Ok(self.push(Tensor::new(shape2(1, cols), out)?, Op::MeanRows { a: a.0 }, rg))
            }
            1 => {
                let inv = T::one() / T::of(cols as f64);
                let out = (0..rows)
                    .map(|r| ta.row(r).iter().copied().sum::<T>() * inv)
                    .collect();
                Ok(self.push(Tensor::new(shape2(rows, 1), out)?, Op::MeanCols { a: a.0 }, rg))
            }
            _ => Err(Error::contract(format!("mean over axis {axis} of a matrix"))),
        }
    }

    /// Mean of all elements as a `[1, 1]` tensor.
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let m = self.mean_axis(a, 0)?;
        self.mean_axis(m, 1)
    }

    /// Stacks matrices along the row (token) axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat of nothing"))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        let mut rg = false;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(self.shape_err("concat_rows", first, p));
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
            rg |= self.rg(p);
        }
        let ids = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Tensor::new(shape2(rows, cols), data)?, Op::ConcatRows { parts: ids }, rg))
    }

    /// Joins matrices side by side along the feature axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat of nothing"))?;
        let rows = self.value(first).rows();
        let mut total = 0;
        let mut rg = false;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(self.shape_err("concat_cols", first, p));
            }
            total += self.value(p).cols();
            rg |= self.rg(p);
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let ids = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Tensor::new(shape2(rows, total), data)?, Op::ConcatCols { parts: ids }, rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if start >= end || end > ta.rows() {
            return Err(Error::contract(format!(
                "row slice {start}..{end} of {:?}",
                ta.shape()
            )));
        }
        let cols = ta.cols();
        let data = ta.data()[start * cols..end * cols].to_vec();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(shape2(end - start, cols), data)?,
            Op::SliceRows { a: a.0, start },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if start >= end || end > ta.cols() {
            return Err(Error::contract(format!(
                "column slice {start}..{end} of {:?}",
                ta.shape()
            )));
        }
        let rows = ta.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&ta.row(r)[start..end]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(shape2(rows, end - start), data)?,
            Op::SliceCols { a: a.0, start },
            rg,
        ))
    }

    /// Embedding lookup: row `indices[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (rows, cols) = (tt.rows(), tt.cols());
        if indices.is_empty() {
            return Err(Error::contract("gather of zero rows"));
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::contract(format!("gather index {i} out of {rows} rows")));
            }
            data.extend_from_slice(tt.row(i));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(shape2(indices.len(), cols), data)?,
            Op::Gather {
                table: table.0,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Inverted dropout driven by the tape's counter-based stream.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::contract(format!("dropout rate {rate} outside [0,1)")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let n = self.value(a).numel();
        let base = self.dropout_counter;
        self.dropout_counter += n as u64;
        let mask: Vec<T> = (0..n as u64)
            .map(|i| {
                if counter_uniform(self.dropout_seed, base + i) < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let ta = self.value(a);
        let data = ta.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Dropout { a: a.0, mask }, rg))
    }

    /// Mean softmax cross-entropy of `logits` rows against class indices.
    pub fn cross_entropy_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (rows, cols) = (tl.rows(), tl.cols());
        if targets.len() != rows {
            return Err(Error::contract(format!(
                "{} targets for {rows} logit rows",
                targets.len()
            )));
        }
        let mut probs = vec![T::zero(); rows * cols];
        let mut loss = T::zero();
        for r in 0..rows {
            if targets[r] >= cols {
                return Err(Error::contract(format!("target class {} of {cols}", targets[r])));
            }
            let row = tl.row(r);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + sum.ln();
            for c in 0..cols {
                probs[r * cols + c] = (row[c] - lse).exp();
            }
            loss = loss + lse - row[targets[r]];
        }
        loss = loss / T::of(rows as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::new(shape2(1, 1), vec![loss])?,
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean squared error against fixed targets.
    pub fn mse(&mut self, pred: Var, targets: &[T]) -> Result<Var> {
        let tp = self.value(pred);
        if tp.numel() != targets.len() {
            return Err(Error::contract(format!(
                "{} targets for {} predictions",
                targets.len(),
                tp.numel()
            )));
        }
        let n = T::of(targets.len() as f64);
        let loss = tp
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<T>()
            / n;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::new(shape2(1, 1), vec![loss])?,
            Op::Mse {
                pred: pred.0,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(mut g) = grads[id].take() else {
                continue;
            };
            if let Some(f) = self.fault {
                if f.op == node.op.kind() {
                    let s = T::of(f.factor);
                    g.iter_mut().for_each(|v| *v = *v * s);
                }
            }
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn backward_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if self.wants(a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_nt(g, self.nodes[b].value.data(), &mut da, m, n, k);
                    accumulate(grads, a, &da);
                }
                if self.wants(b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_tn(self.nodes[a].value.data(), g, &mut db, m, k, n);
                    accumulate(grads, b, &db);
                }
            }
            &Op::MatMulT { a, b, m, k, n } => {
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                if self.wants(a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_nn(g, self.nodes[b].value.data(), &mut da, m, n, k);
                    accumulate(grads, a, &da);
                }
                if self.wants(b) {
                    let mut db = vec![T::zero(); n * k];
                    gemm_tn(g, self.nodes[a].value.data(), &mut db, m, n, k);
                    accumulate(grads, b, &db);
                }
            }
            &Op::Add { a, b, bc } => {
                if self.wants(a) {
                    accumulate(grads, a, g);
                }
                if self.wants(b) {
                    let db = self.reduce_bcast(b, bc, g.iter().copied());
                    accumulate(grads, b, &db);
                }
            }
            &Op::Sub { a, b, bc } => {
                if self.wants(a) {
                    accumulate(grads, a, g);
                }
                if self.wants(b) {
                    let db = self.reduce_bcast(b, bc, g.iter().map(|&v| -v));
                    accumulate(grads, b, &db);
                }
            }
            &Op::Mul { a, b, bc } => {
                let ta = self.nodes[a].value.data();
                let tb = self.nodes[b].value.data();
                let cols = self.nodes[a].value.cols();
                let bval = |i: usize| match bc {
                    Bcast::Same => tb[i],
                    Bcast::Row => tb[i % cols],
                    Bcast::Scalar => tb[0],
                };
                if self.wants(a) {
                    let da: Vec<T> = g.iter().enumerate().map(|(i, &gv)| gv * bval(i)).collect();
                    accumulate(grads, a, &da);
                }
                if self.wants(b) {
                    let db = self.reduce_bcast(b, bc, g.iter().zip(ta).map(|(&gv, &av)| gv * av));
                    accumulate(grads, b, &db);
                }
            }
            &Op::Scale { a, c } => {
                let da: Vec<T> = g.iter().map(|&v| v * c).collect();
                accumulate(grads, a, &da);
            }
            &Op::Sigmoid { a } => {
                let da: Vec<T> = g
                    .iter()
                    .zip(out)
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                accumulate(grads, a, &da);
            }
            &Op::Gelu { a } => {
                let x = self.nodes[a].value.data();
                let da: Vec<T> = g.iter().zip(x).map(|(&gv, &xv)| gv * gelu_grad(xv)).collect();
                accumulate(grads, a, &da);
            }
            &Op::Softmax { a } => {
                let cols = node.value.cols();
                let mut da = vec![T::zero(); g.len()];
                for r in 0..node.value.rows() {
                    let gy = &g[r * cols..(r + 1) * cols];
                    let y = &out[r * cols..(r + 1) * cols];
                    let dot: T = gy.iter().zip(y).map(|(&p, &q)| p * q).sum();
                    for c in 0..cols {
                        da[r * cols + c] = y[c] * (gy[c] - dot);
                    }
                }
                accumulate(grads, a, &da);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let cols = node.value.cols();
                let rows = node.value.rows();
                let gv = self.nodes[gain].value.data();
                if self.wants(gain) || self.wants(bias) {
                    let mut dg = vec![T::zero(); cols];
                    let mut db = vec![T::zero(); cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            let gi = g[r * cols + c];
                            dg[c] = dg[c] + gi * xhat[r * cols + c];
                            db[c] = db[c] + gi;
                        }
                    }
                    if self.wants(gain) {
                        accumulate(grads, gain, &dg);
                    }
                    if self.wants(bias) {
                        accumulate(grads, bias, &db);
                    }
                }
                if self.wants(x) {
                    let n = T::of(cols as f64);
                    let mut dx = vec![T::zero(); rows * cols];
                    for r in 0..rows {
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for c in 0..cols {
                            let d = g[r * cols + c] * gv[c];
                            sum_d = sum_d + d;
                            sum_dx = sum_dx + d * xhat[r * cols + c];
                        }
                        let scale = inv_std[r] / n;
                        for c in 0..cols {
                            let d = g[r * cols + c] * gv[c];
                            dx[r * cols + c] = scale * (n * d - sum_d - xhat[r * cols + c] * sum_dx);
                        }
                    }
                    accumulate(grads, x, &dx);
                }
            }
            &Op::MeanRows { a } => {
                let ta = &self.nodes[a].value;
                let (rows, cols) = (ta.rows(), ta.cols());
                let inv = T::one() / T::of(rows as f64);
                let mut da = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        da[r * cols + c] = g[c] * inv;
                    }
                }
                accumulate(grads, a, &da);
            }
            &Op::MeanCols { a } => {
                let ta = &self.nodes[a].value;
                let (rows, cols) = (ta.rows(), ta.cols());
                let inv = T::one() / T::of(cols as f64);
                let mut da = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        da[r * cols + c] = g[r] * inv;
                    }
                }
                accumulate(grads, a, &da);
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].value.numel();
                    if self.wants(p) {
                        accumulate(grads, p, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols { parts } => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut col0 = 0;
                for &p in parts {
                    let pc = self.nodes[p].value.cols();
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * total + col0..r * total + col0 + pc]);
                        }
                        accumulate(grads, p, &dp);
                    }
                    col0 += pc;
                }
            }
            &Op::SliceRows { a, start } => {
                let ta = &self.nodes[a].value;
                let cols = ta.cols();
                let mut da = vec![T::zero(); ta.numel()];
                da[start * cols..start * cols + g.len()].copy_from_slice(g);
                accumulate(grads, a, &da);
            }
            &Op::SliceCols { a, start } => {
                let ta = &self.nodes[a].value;
                let cols = ta.cols();
                let width = node.value.cols();
                let mut da = vec![T::zero(); ta.numel()];
                for r in 0..ta.rows() {
                    da[r * cols + start..r * cols + start + width]
                        .copy_from_slice(&g[r * width..(r + 1) * width]);
                }
                accumulate(grads, a, &da);
            }
            Op::Gather { table, indices } => {
                let tt = &self.nodes[*table].value;
                let cols = tt.cols();
                let mut dt = vec![T::zero(); tt.numel()];
                for (i, &row) in indices.iter().enumerate() {
                    for c in 0..cols {
                        dt[row * cols + c] = dt[row * cols + c] + g[i * cols + c];
                    }
                }
                accumulate(grads, *table, &dt);
            }
            Op::Dropout { a, mask } => {
                let da: Vec<T> = g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                accumulate(grads, *a, &da);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let cols = self.nodes[*logits].value.cols();
                let rows = targets.len();
                let scale = g[0] / T::of(rows as f64);
                let mut dl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    dl[r * cols + t] = dl[r * cols + t] - T::one();
                }
                dl.iter_mut().for_each(|v| *v = *v * scale);
                accumulate(grads, *logits, &dl);
            }
            Op::Mse { pred, targets } => {
                let p = self.nodes[*pred].value.data();
                let scale = g[0] * T::of(2.0 / targets.len() as f64);
                let dp: Vec<T> = p.iter().zip(targets).map(|(&pv, &t)| (pv - t) * scale).collect();
                accumulate(grads, *pred, &dp);
            }
        }
    }

    fn reduce_bcast(&self, b: usize, bc: Bcast, g: impl Iterator<Item = T>) -> Vec<T> {
        let nb = self.nodes[b].value.numel();
        match bc {
            Bcast::Same => g.collect(),
            Bcast::Row => {
                let mut out = vec![T::zero(); nb];
                for (i, v) in g.enumerate() {
                    out[i % nb] = out[i % nb] + v;
                }
                out
            }
            Bcast::Scalar => vec![g.fold(T::zero(), |acc, v| acc + v)],
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, contrib: &[T]) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, &c) in existing.iter_mut().zip(contrib) {
                *e = *e + c;
            }
        }
        slot @ None => *slot = Some(contrib.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut tape = Tape::<f64>::new();
        let i = tape.constant(t(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let b = tape.constant(t(&[vec![3.0, 4.0], vec![5.0, 6.0]]));
        let c = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);

        let x = tape.constant(t(&[vec![1.0, 2.0]]));
        let y = tape.constant(t(&[vec![3.0], vec![4.0]]));
        let z = tape.matmul(x, y).unwrap();
        assert_eq!(tape.value(z).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::new(vec![3], vec![0.3, -1.0, 2.0]).unwrap());
        let m = tape.mean_all(w).unwrap();
        let loss = tape.scale(m, 3.0);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_is_twice_w() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let sq = tape.mul(w, w).unwrap();
        let m = tape.mean_all(sq).unwrap();
        let loss = tape.scale(m, 3.0);
        let g = tape.backward(loss).unwrap();
        let got = g.wrt(w);
        for (a, b) in got.data().iter().zip([2.0, 4.0, 6.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::<f32>::new();
        let used = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        let loss = tape.mul(used, used).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let w = tape.param(Tensor::zeros(vec![2, 2]));
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_rows_cases() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(
            Tensor::from_rows(&[vec![0.0, 0.0, 0.0], vec![1000.0, 0.0, -5.0]]).unwrap(),
        );
        let y = tape.softmax_rows(x);
        let v = tape.value(y);
        for c in 0..3 {
            assert!((v.row(0)[c] - 1.0 / 3.0).abs() < 1e-6);
        }
        assert!((v.row(1)[0] - 1.0).abs() < 1e-6);
        assert!(v.row(1)[1] < 1e-6 && v.is_finite());
    }

    #[test]
    fn layer_norm_constant_row_and_zero_gain() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_rows(&[vec![4.0; 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap());
        let ones = tape.constant(Tensor::full(vec![5], 1.0));
        let zeros = tape.constant(Tensor::zeros(vec![5]));
        let y = tape.layer_norm(x, ones, zeros, 1e-5).unwrap();
        assert!(tape.value(y).row(0).iter().all(|&v| v == 0.0));

        let bias = tape.constant(Tensor::new(vec![5], vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap());
        let y = tape.layer_norm(x, zeros, bias, 1e-5).unwrap();
        for r in 0..2 {
            assert_eq!(tape.value(y).row(r), &[0.1, 0.2, 0.3, 0.4, 0.5]);
        }
    }

    #[test]
    fn dropout_is_reproducible_per_seed() {
        let run = |seed| {
            let mut tape = Tape::<f32>::new();
            tape.set_dropout_seed(seed);
            let x = tape.constant(Tensor::full(vec![4, 8], 1.0));
            let y = tape.dropout(x, 0.5).unwrap();
            tape.value(y).data().to_vec()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
        assert!(run(3).iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln2() {
        let mut tape = Tape::<f64>::new();
        let l = tape.param(t(&[vec![0.5, 0.5]]));
        let loss = tape.cross_entropy_logits(l, &[1]).unwrap();
        assert!((tape.value(loss).item() - 2f64.ln()).abs() < 1e-12);
        let g = tape.backward(loss).unwrap();
        let d = g.wrt(l);
        assert!((d.data()[0] - 0.5).abs() < 1e-12 && (d.data()[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn fault_injection_scales_gradient() {
        let mut tape = Tape::<f64>::new();
        tape.inject_fault(Fault {
            op: OpKind::Sigmoid,
            factor: 2.0,
        });
        let x = tape.param(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        let g = tape.backward(y).unwrap();
        assert!((g.wrt(x).item() - 0.5).abs() < 1e-12);
    }
}
