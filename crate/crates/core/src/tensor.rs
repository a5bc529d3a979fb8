//! Dense row-major matrices with a reverse-mode differentiation tape and Adam.
//!
//! Every tape value is a `rows × cols` matrix. A forward pass records nodes in creation
//! order; [`Tape::backward`] walks them once in reverse. Parameters live in a
//! [`ParamStore`] and enter a tape through [`Tape::param`], which caches one leaf per
//! parameter so gradients accumulate in one place.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::Float;

use crate::error::TensorError;

/// Floating-point element type used by tensors and the tape.
pub trait Real: Float + Sum + Default + Debug + Display + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite constant")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// An owned dense array. Shapes of rank 0, 1 and 2 are supported; rank-1 tensors act
/// as `1 × n` row vectors on the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if shape.len() > 2 || numel != data.len() {
            return Err(TensorError::Shape {
                op: "tensor",
                lhs: (shape.len(), numel),
                rhs: (0, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, TensorError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![T::zero(); numel] }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Shape { op: "from_rows", lhs: (rows.len(), cols), rhs: (0, 0) });
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    ScaleRows(Var, Var),
    Relu(Var),
    Log(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T>, scale: T },
    Nll { probs: Var, targets: Vec<Option<usize>>, scale: T },
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
}

/// Recorded forward computation. Exclusive to one thread of work.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<Option<Var>>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<Option<Var>>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].as_deref()
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params.get(id.0).copied().flatten().and_then(|v| self.wrt(v))
    }

    /// Per-parameter gradients (`None` where the parameter did not influence the loss).
    pub fn into_param_grads(mut self, n_params: usize) -> Vec<Option<Vec<T>>> {
        (0..n_params)
            .map(|i| self.params.get(i).copied().flatten().and_then(|v| self.nodes[v.0].take()))
            .collect()
    }
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> TensorError {
    TensorError::Shape { op, lhs: a, rhs: b }
}

// c[m×n] += a[m×k] · b[k×n]
fn gemm<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

// c[m×k] += a[m×n] · b[k×n]ᵀ
fn gemm_bt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let dot: T = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            c[i * k + j] = c[i * k + j] + dot;
        }
    }
}

// c[k×n] += a[m×k]ᵀ · b[m×n]
fn gemm_at<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// Row-wise softmax with max subtraction. With `causal`, row `i` only covers columns
/// `0..=i + (cols - rows)`; the rest get probability zero.
pub fn softmax_rows_in_place<T: Real>(data: &mut [T], rows: usize, cols: usize, causal: bool) {
    let offset = cols.saturating_sub(rows);
    for r in 0..rows {
        let row = &mut data[r * cols..(r + 1) * cols];
        let live = if causal { (r + offset + 1).min(cols) } else { cols };
        let max = row[..live].iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in &mut row[..live] {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in &mut row[..live] {
            *v = *v / total;
        }
        for v in &mut row[live..] {
            *v = T::zero();
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor { shape: vec![n.rows, n.cols], data: n.value.clone() }
    }

    /// Records an input that gradients may be taken with respect to.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.rows(), t.cols(), t.data.clone(), Op::Leaf)
    }

    pub fn leaf_matrix(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var, TensorError> {
        if rows * cols != data.len() {
            return Err(shape_err("leaf", (rows, cols), (data.len(), 1)));
        }
        Ok(self.push(rows, cols, data, Op::Leaf))
    }

    /// Leaf for a stored parameter, created on first use and reused afterwards.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if self.params.len() <= id.0 {
            self.params.resize(id.0 + 1, None);
        }
        if let Some(v) = self.params[id.0] {
            return v;
        }
        let v = self.leaf(store.get(id));
        self.params[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul", (m, k), (k2, n)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(m, n, out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let src = self.value(a);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push(n, m, out, Op::Transpose(a))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(usize, usize, Vec<T>), TensorError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        Ok((sa.0, sa.1, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c, out) = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(r, c, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c, out) = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(r, c, out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c, out) = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(r, c, out, Op::Mul(a, b)))
    }

    /// Adds a `1 × n` bias to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, TensorError> {
        let (m, n) = self.shape(a);
        if self.shape(bias) != (1, n) {
            return Err(shape_err("add_row", (m, n), self.shape(bias)));
        }
        let b = self.value(bias);
        let out = self.value(a).iter().enumerate().map(|(i, &x)| x + b[i % n]).collect();
        Ok(self.push(m, n, out, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x * s).collect();
        self.push(m, n, out, Op::Scale(a, s))
    }

    /// Multiplies row `i` of `a` (`m × n`) by `s[i]` (`s` is `m × 1`).
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var, TensorError> {
        let (m, n) = self.shape(a);
        if self.shape(s) != (m, 1) {
            return Err(shape_err("scale_rows", (m, n), self.shape(s)));
        }
        let sv = self.value(s);
        let out = self.value(a).iter().enumerate().map(|(i, &x)| x * sv[i / n]).collect();
        Ok(self.push(m, n, out, Op::ScaleRows(a, s)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        self.push(m, n, out, Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x.ln()).collect();
        self.push(m, n, out, Op::Log(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        self.softmax_rows_masked(a, false)
    }

    /// Row softmax; with `causal`, entries right of the diagonal are masked out.
    pub fn softmax_rows_masked(&mut self, a: Var, causal: bool) -> Var {
        let (m, n) = self.shape(a);
        let mut out = self.value(a).to_vec();
        softmax_rows_in_place(&mut out, m, n, causal);
        self.push(m, n, out, Op::Softmax(a))
    }

    /// Row-wise layer normalization with `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let (m, n) = self.shape(x);
        if self.shape(gamma) != (1, n) || self.shape(beta) != (1, n) {
            return Err(shape_err("layer_norm", (m, n), self.shape(gamma)));
        }
        let eps = T::from_f64(1e-5);
        let nf = T::from_f64(n as f64);
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        Ok(self.push(m, n, out, Op::LayerNorm { x, gamma, beta, xhat, rstd }))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty("concat_rows"))?;
        let n = self.shape(first).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != n {
                return Err(shape_err("concat_rows", self.shape(first), (r, c)));
            }
            out.extend_from_slice(self.value(p));
            rows += r;
        }
        Ok(self.push(rows, n, out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty("concat_cols"))?;
        let m = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != m {
                return Err(shape_err("concat_cols", self.shape(first), (r, c)));
            }
            cols += c;
        }
        let mut out = Vec::with_capacity(m * cols);
        for r in 0..m {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(m, cols, out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (m, n) = self.shape(a);
        if start + len > m || len == 0 {
            return Err(TensorError::Index { op: "slice_rows", index: start + len, len: m });
        }
        let out = self.value(a)[start * n..(start + len) * n].to_vec();
        Ok(self.push(len, n, out, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (m, n) = self.shape(a);
        if start + len > n || len == 0 {
            return Err(TensorError::Index { op: "slice_cols", index: start + len, len: n });
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        Ok(self.push(m, len, out, Op::SliceCols(a, start)))
    }

    /// Gathers rows of a `V × d` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (v, d) = self.shape(table);
        if ids.is_empty() {
            return Err(TensorError::Empty("embedding"));
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Index { op: "embedding", index: id, len: v });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        Ok(self.push(ids.len(), d, out, Op::Embedding { table, ids: ids.to_vec() }))
    }

    /// Softmax cross-entropy of each row of `logits` against its target. Rows whose target
    /// equals `ignore` contribute nothing; `Mean` divides by the number of counted rows.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore: Option<usize>,
        reduction: Reduction,
    ) -> Result<Var, TensorError> {
        let (m, v) = self.shape(logits);
        let targets = check_targets("cross_entropy", targets, m, v, ignore)?;
        let mut probs = self.value(logits).to_vec();
        softmax_rows_in_place(&mut probs, m, v, false);
        let counted = targets.iter().flatten().count();
        let scale = reduction_scale(reduction, counted);
        let logits_v = self.value(logits);
        let mut total = T::zero();
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let row = &logits_v[r * v..(r + 1) * v];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
                total = total + (lse - row[t]);
            }
        }
        Ok(self.push(1, 1, vec![total * scale], Op::CrossEntropy { logits, targets, probs, scale }))
    }

    /// Negative log-likelihood of targets under row-wise probability vectors.
    pub fn nll(
        &mut self,
        probs: Var,
        targets: &[usize],
        ignore: Option<usize>,
        reduction: Reduction,
    ) -> Result<Var, TensorError> {
        let (m, v) = self.shape(probs);
        let targets = check_targets("nll", targets, m, v, ignore)?;
        let counted = targets.iter().flatten().count();
        let scale = reduction_scale(reduction, counted);
        let pv = self.value(probs);
        let total = targets
            .iter()
            .enumerate()
            .filter_map(|(r, t)| t.map(|t| -pv[r * v + t].ln()))
            .sum::<T>();
        Ok(self.push(1, 1, vec![total * scale], Op::Nll { probs, targets, scale }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::from_f64(n as f64))
    }

    /// Reverse sweep from a `1 × 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { nodes: grads, params: self.params.clone() })
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let (m, n) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let k = self.nodes[a.0].cols;
                let mut da = vec![T::zero(); m * k];
                gemm_bt(g, self.value(*b), &mut da, m, n, k);
                accumulate(grads, *a, &da);
                let mut db = vec![T::zero(); k * n];
                gemm_at(self.value(*a), g, &mut db, m, k, n);
                accumulate(grads, *b, &db);
            }
            Op::Transpose(a) => {
                let mut da = vec![T::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[j * m + i] = g[i * n + j];
                    }
                }
                accumulate(grads, *a, &da);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let neg: Vec<T> = g.iter().map(|&x| -x).collect();
                accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<T> = g.iter().zip(self.value(*b)).map(|(&x, &y)| x * y).collect();
                let db: Vec<T> = g.iter().zip(self.value(*a)).map(|(&x, &y)| x * y).collect();
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::AddRow(a, bias) => {
                accumulate(grads, *a, g);
                let mut db = vec![T::zero(); n];
                for (i, &x) in g.iter().enumerate() {
                    db[i % n] = db[i % n] + x;
                }
                accumulate(grads, *bias, &db);
            }
            Op::Scale(a, s) => {
                let da: Vec<T> = g.iter().map(|&x| x * *s).collect();
                accumulate(grads, *a, &da);
            }
            Op::ScaleRows(a, s) => {
                let sv = self.value(*s);
                let av = self.value(*a);
                let da: Vec<T> = g.iter().enumerate().map(|(i, &x)| x * sv[i / n]).collect();
                let mut ds = vec![T::zero(); m];
                for (i, &x) in g.iter().enumerate() {
                    ds[i / n] = ds[i / n] + x * av[i];
                }
                accumulate(grads, *a, &da);
                accumulate(grads, *s, &ds);
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let da: Vec<T> =
                    g.iter().zip(av).map(|(&x, &v)| if v > T::zero() { x } else { T::zero() }).collect();
                accumulate(grads, *a, &da);
            }
            Op::Log(a) => {
                let da: Vec<T> = g.iter().zip(self.value(*a)).map(|(&x, &v)| x / v).collect();
                accumulate(grads, *a, &da);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut da = vec![T::zero(); m * n];
                for r in 0..m {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for c in 0..n {
                        da[r * n + c] = yr[c] * (gr[c] - dot);
                    }
                }
                accumulate(grads, *a, &da);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gv = self.value(*gamma);
                let nf = T::from_f64(n as f64);
                let mut dx = vec![T::zero(); m * n];
                let mut dg = vec![T::zero(); n];
                let mut db = vec![T::zero(); n];
                for r in 0..m {
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for c in 0..n {
                        let i = r * n + c;
                        dg[c] = dg[c] + g[i] * xhat[i];
                        db[c] = db[c] + g[i];
                        let dh = g[i] * gv[c];
                        sum_dh = sum_dh + dh;
                        sum_dh_h = sum_dh_h + dh * xhat[i];
                    }
                    for c in 0..n {
                        let i = r * n + c;
                        let dh = g[i] * gv[c];
                        dx[i] = rstd[r] / nf * (nf * dh - sum_dh - xhat[i] * sum_dh_h);
                    }
                }
                accumulate(grads, *x, &dx);
                accumulate(grads, *gamma, &dg);
                accumulate(grads, *beta, &db);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    accumulate(grads, *p, &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for p in parts {
                    let c = self.nodes[p.0].cols;
                    let mut dp = Vec::with_capacity(m * c);
                    for r in 0..m {
                        dp.extend_from_slice(&g[r * n + col..r * n + col + c]);
                    }
                    accumulate(grads, *p, &dp);
                    col += c;
                }
            }
            Op::SliceRows(a, start) => {
                let src_cols = self.nodes[a.0].cols;
                let mut da = vec![T::zero(); self.nodes[a.0].value.len()];
                da[start * src_cols..(start + m) * src_cols].copy_from_slice(g);
                accumulate(grads, *a, &da);
            }
            Op::SliceCols(a, start) => {
                let src_cols = self.nodes[a.0].cols;
                let mut da = vec![T::zero(); self.nodes[a.0].value.len()];
                for r in 0..m {
                    da[r * src_cols + start..r * src_cols + start + n].copy_from_slice(&g[r * n..(r + 1) * n]);
                }
                accumulate(grads, *a, &da);
            }
            Op::Embedding { table, ids } => {
                let mut dt = vec![T::zero(); self.nodes[table.0].value.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..n {
                        dt[id * n + c] = dt[id * n + c] + g[r * n + c];
                    }
                }
                accumulate(grads, *table, &dt);
            }
            Op::CrossEntropy { logits, targets, probs, scale } => {
                let v = self.nodes[logits.0].cols;
                let s = g[0] * *scale;
                let mut dl = vec![T::zero(); probs.len()];
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        for c in 0..v {
                            dl[r * v + c] = probs[r * v + c] * s;
                        }
                        dl[r * v + t] = dl[r * v + t] - s;
                    }
                }
                accumulate(grads, *logits, &dl);
            }
            Op::Nll { probs, targets, scale } => {
                let v = self.nodes[probs.0].cols;
                let pv = self.value(*probs);
                let s = g[0] * *scale;
                let mut dp = vec![T::zero(); pv.len()];
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        dp[r * v + t] = -s / pv[r * v + t];
                    }
                }
                accumulate(grads, *probs, &dp);
            }
            Op::Sum(a) => {
                let da = vec![g[0]; self.nodes[a.0].value.len()];
                accumulate(grads, *a, &da);
            }
        }
    }
}

fn check_targets(
    op: &'static str,
    targets: &[usize],
    rows: usize,
    vocab: usize,
    ignore: Option<usize>,
) -> Result<Vec<Option<usize>>, TensorError> {
    if targets.len() != rows {
        return Err(shape_err(op, (rows, vocab), (targets.len(), 1)));
    }
    targets
        .iter()
        .map(|&t| {
            if Some(t) == ignore {
                Ok(None)
            } else if t >= vocab {
                Err(TensorError::Index { op, index: t, len: vocab })
            } else {
                Ok(Some(t))
            }
        })
        .collect()
}

fn reduction_scale<T: Real>(reduction: Reduction, counted: usize) -> T {
    match reduction {
        Reduction::Sum => T::one(),
        Reduction::Mean if counted == 0 => T::zero(),
        Reduction::Mean => T::one() / T::from_f64(counted as f64),
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, &x) in acc.iter_mut().zip(g) {
                *a = *a + x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learned tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: BTreeMap::new() }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor; re-adding a name replaces its value in place.
    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> ParamId {
        if let Some(&i) = self.index.get(name) {
            self.tensors[i] = tensor;
            return ParamId(i);
        }
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.index.insert(name.to_string(), self.tensors.len() - 1);
        ParamId(self.tensors.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Copies values from `other` for every name both stores share with equal shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<(), TensorError> {
        for (name, t) in other.iter() {
            let id = self.id(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
            let dst = &mut self.tensors[id.0];
            if dst.shape() != t.shape() {
                return Err(shape_err("load", (dst.rows(), dst.cols()), (t.rows(), t.cols())));
            }
            dst.clone_from(t);
        }
        Ok(())
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Option<Vec<T>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|&x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::from_f64(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            for x in g.iter_mut() {
                *x = *x * s;
            }
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam moments for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = |t: &Tensor<T>| vec![T::zero(); t.numel()];
        Self {
            config,
            step: 0,
            first: params.tensors.iter().map(zeros).collect(),
            second: params.tensors.iter().map(zeros).collect(),
        }
    }

    pub fn first_moment(&self, id: ParamId) -> &[T] {
        &self.first[id.0]
    }

    pub fn second_moment(&self, id: ParamId) -> &[T] {
        &self.second[id.0]
    }

    /// One update with learning rate `lr`; `None` gradients count as zero.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &[Option<Vec<T>>],
        lr: f64,
    ) -> Result<(), TensorError> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(shape_err("adam", (params.len(), 0), (grads.len(), 0)));
        }
        for (t, g) in params.tensors.iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != t.numel() {
                    return Err(shape_err("adam", (t.rows(), t.cols()), (g.len(), 1)));
                }
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let c1 = T::from_f64(1.0 - beta1.powi(self.step as i32));
        let c2 = T::from_f64(1.0 - beta2.powi(self.step as i32));
        let (lr, eps) = (T::from_f64(lr), T::from_f64(eps));
        for ((t, g), (m, v)) in params
            .tensors
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for i in 0..t.data.len() {
                let gi = g.as_ref().map_or(T::zero(), |g| g[i]);
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                t.data[i] = t.data[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_values_and_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(&m(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(&m(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[19.0, 22.0, 43.0, 50.0]);

        let i = tape.leaf(&m(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let ai = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(ai), tape.value(a));

        let x = tape.leaf(&m(2, 3, &[0.0; 6]));
        assert!(matches!(tape.matmul(x, b), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn softmax_properties() {
        let mut tape = Tape::new();
        let x = tape.leaf(&m(1, 2, &[0.0, 2f64.ln()]));
        let y = tape.softmax_rows(x);
        assert!((tape.value(y)[0] - 1.0 / 3.0).abs() < 1e-9);
        assert!((tape.value(y)[1] - 2.0 / 3.0).abs() < 1e-9);

        let u = tape.leaf(&m(1, 4, &[3.0; 4]));
        let uy = tape.softmax_rows(u);
        assert!(tape.value(uy).iter().all(|&p| (p - 0.25).abs() < 1e-15));

        let base = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = base.iter().map(|v| v + 123.0).collect();
        let a = tape.leaf(&m(1, 4, &base));
        let b = tape.leaf(&m(1, 4, &shifted));
        let (pa, pb) = (tape.softmax_rows(a), tape.softmax_rows(b));
        for (p, q) in tape.value(pa).iter().zip(tape.value(pb)) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut tape = Tape::new();
        let x = tape.leaf(&m(3, 3, &[1.0, 5.0, 9.0, 2.0, 2.0, 7.0, 0.0, 1.0, 2.0]));
        let y = tape.softmax_rows_masked(x, true);
        let v = tape.value(y);
        assert_eq!(v[0], 1.0);
        assert_eq!(&v[1..3], &[0.0, 0.0]);
        assert!((v[3] - 0.5).abs() < 1e-15 && v[5] == 0.0);
    }

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&m(1, 3, &[1.0, -2.0, 0.5]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&m(2, 3, &[0.1, 2.0, -1.0, 3.0, 3.0, 0.0]));
        let y = tape.softmax_rows(x);
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(x).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&m(1, 2, &[1.0, 2.0]));
        assert_eq!(tape.backward(x).unwrap_err(), TensorError::NonScalarLoss((1, 2)));
    }

    #[test]
    fn cross_entropy_ignores_pad() {
        let mut tape = Tape::new();
        let logits = tape.leaf(&m(2, 3, &[0.0, 0.0, 0.0, 1.0, 2.0, 3.0]));
        let ce = tape.cross_entropy(logits, &[1, 0], Some(0), Reduction::Mean).unwrap();
        assert!((tape.value(ce)[0] - 3f64.ln()).abs() < 1e-12);
        let g = tape.backward(ce).unwrap();
        assert!(g.wrt(logits).unwrap()[3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut store = ParamStore::new();
        let id = store.insert("w", m(1, 2, &[1.0, -1.0]));
        let mut adam = AdamState::new(&store, AdamConfig::default());
        adam.step(&mut store, &[None], 0.1).unwrap();
        assert_eq!(store.get(id).data(), &[1.0, -1.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_first_two_steps_match_recurrence() {
        let mut store = ParamStore::new();
        let id = store.insert("w", m(1, 2, &[0.5, -0.25]));
        let mut adam = AdamState::new(&store, AdamConfig::default());
        let g = [0.2, -3.0];
        let lr = 0.01;

        adam.step(&mut store, &[Some(g.to_vec())], lr).unwrap();
        // Step 1: m̂ = g, v̂ = g², update = -lr·g/(|g| + ε).
        let after1: Vec<f64> =
            [0.5, -0.25].iter().zip(&g).map(|(p, gi)| p - lr * gi / (gi.abs() + 1e-8)).collect();
        for (a, b) in store.get(id).data().iter().zip(&after1) {
            assert!((a - b).abs() < 1e-15);
        }

        adam.step(&mut store, &[Some(g.to_vec())], lr).unwrap();
        // Step 2 by hand: m = 0.19·g, v = 0.001999·g², corrections 0.19 and 0.001999.
        for (i, gi) in g.iter().enumerate() {
            let m2 = 0.9 * 0.1 * gi + 0.1 * gi;
            let v2 = 0.999 * 0.001 * gi * gi + 0.001 * gi * gi;
            let mhat = m2 / (1.0 - 0.81);
            let vhat = v2 / (1.0 - 0.998_001);
            let expect = after1[i] - lr * mhat / (vhat.sqrt() + 1e-8);
            assert!((store.get(id).data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut grads = vec![Some(vec![3.0f64, 0.0]), None, Some(vec![4.0])];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((grads[0].as_ref().unwrap()[0] - 0.6).abs() < 1e-12);
        assert!((grads[2].as_ref().unwrap()[0] - 0.8).abs() < 1e-12);
    }
}
