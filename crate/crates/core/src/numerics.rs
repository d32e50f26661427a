//! Small dense fp64 tensor kernel with tape-based reverse-mode gradients.
//!
//! Every tensor is a row-major matrix (vectors are `1 x n`). A [`Tape`]
//! records one forward pass over borrowed parameters; [`Tape::backward`]
//! returns gradients aligned with the [`ParamStore`] order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("empty vector")]
    EmptyVector,
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    #[serde(default)]
    pub requires_grad: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor, NumericsError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor, NumericsError> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor::matrix(rows, cols, vec![0.0; rows * cols]).expect("sizes agree")
    }

    pub fn row_vector(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::matrix(1, n, data).expect("sizes agree")
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::row_vector(vec![v])
    }

    pub fn identity(n: usize) -> Tensor {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn trainable(mut self) -> Tensor {
        self.requires_grad = true;
        self
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn dims(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }
}

// ---- eager kernels ---------------------------------------------------------

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
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

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, k) = a.dims();
    let (k2, n) = b.dims();
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = vec![0.0; m * n];
    matmul_raw(&a.data, &b.data, m, k, n, &mut out);
    Tensor::matrix(m, n, out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    if a.dims() != b.dims() {
        return Err(mismatch("add", a, b));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Tensor::matrix(a.rows(), a.cols(), data)
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|v| v.max(0.0)).collect();
    Tensor::matrix(x.rows(), x.cols(), data).expect("same shape")
}

pub fn scale(x: &Tensor, c: f64) -> Tensor {
    let data = x.data.iter().map(|v| v * c).collect();
    Tensor::matrix(x.rows(), x.cols(), data).expect("same shape")
}

/// Concatenates along rows (`axis = 0`) or columns (`axis = 1`).
pub fn concat(xs: &[&Tensor], axis: usize) -> Result<Tensor, NumericsError> {
    let first = xs.first().ok_or(NumericsError::EmptyVector)?;
    if axis == 0 {
        let cols = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for x in xs {
            if x.cols() != cols {
                return Err(mismatch("concat", first, x));
            }
            rows += x.rows();
            data.extend_from_slice(&x.data);
        }
        Tensor::matrix(rows, cols, data)
    } else {
        let rows = first.rows();
        let total: usize = xs.iter().map(|x| x.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for x in xs {
            if x.rows() != rows {
                return Err(mismatch("concat", first, x));
            }
        }
        for r in 0..rows {
            for x in xs {
                data.extend_from_slice(x.row(r));
            }
        }
        Tensor::matrix(rows, total, data)
    }
}

pub fn mean_rows(x: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, n) = x.dims();
    if m == 0 {
        return Err(NumericsError::EmptyVector);
    }
    let mut out = vec![0.0; n];
    for r in 0..m {
        for (o, v) in out.iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= m as f64;
    }
    Ok(Tensor::row_vector(out))
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if v.is_empty() {
        return Err(NumericsError::EmptyVector);
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `-ln(max(probs[label], 1e-12))`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64, NumericsError> {
    let p = probs.get(label).ok_or(NumericsError::BadLabel {
        label,
        classes: probs.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

// ---- parameter store -------------------------------------------------------

/// Named tensors in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: std::collections::HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId, NumericsError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NumericsError::DuplicateParam(name));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id.0);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NumericsError> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor, NumericsError> {
        Ok(self.get(self.id(name)?))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &str, &mut Tensor)> {
        self.names
            .iter()
            .zip(self.tensors.iter_mut())
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Adds `grads` into each trainable tensor's grad buffer.
    pub fn accumulate_grads(&mut self, grads: &Gradients) {
        for (t, g) in self.tensors.iter_mut().zip(&grads.0) {
            if !t.requires_grad {
                continue;
            }
            let Some(g) = g else { continue };
            let buf = t.grad.get_or_insert_with(|| vec![0.0; g.len()]);
            for (b, v) in buf.iter_mut().zip(g) {
                *b += v;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Gradients aligned with a [`ParamStore`]; `None` where a parameter did
/// not participate in the pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Option<Vec<f64>>>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.0.get(id.0).and_then(|g| g.as_deref())
    }
}

// ---- tape ------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Param(ParamId),
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    RowDot(Var, Var),
    MulRowWeights(Var, Var),
    SegmentSoftmax(Var, Vec<usize>),
    MeanRows(Var),
    Softmax(Var),
    CrossEntropy(Var, usize),
    Sum(Var),
}

struct TapeNode {
    op: Op,
    value: Option<Tensor>,
}

/// Records one forward pass. Parameters are borrowed, not copied.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<TapeNode>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(t)) => t,
            _ => unreachable!("non-param node without value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(TapeNode { op, value: Some(value) });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(TapeNode {
            op: Op::Param(id),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var, NumericsError> {
        let id = self.params.id(name)?;
        Ok(self.param(id))
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Const, t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dims() != y.dims() {
            return Err(mismatch("mul", x, y));
        }
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let out = Tensor::matrix(x.rows(), x.cols(), data)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = relu(self.value(x));
        self.push(Op::Relu(x), out)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = scale(self.value(x), c);
        self.push(Op::Scale(x, c), out)
    }

    /// Multiplies every entry of `x` by the `1 x 1` tensor `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var, NumericsError> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(mismatch("mul_scalar", self.value(x), sv));
        }
        let out = scale(self.value(x), sv.data[0]);
        Ok(self.push(Op::MulScalar(x, s), out))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, NumericsError> {
        let refs: Vec<&Tensor> = xs.iter().map(|v| self.value(*v)).collect();
        let out = concat(&refs, axis)?;
        let op = if axis == 0 {
            Op::ConcatRows(xs.to_vec())
        } else {
            Op::ConcatCols(xs.to_vec())
        };
        Ok(self.push(op, out))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= xv.rows() {
                return Err(NumericsError::IndexOutOfRange {
                    index: i,
                    len: xv.rows(),
                });
            }
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::matrix(idx.len(), c, data)?;
        Ok(self.push(Op::GatherRows(x, idx.to_vec()), out))
    }

    /// `out[idx[k]] += x[k]` into an `out_rows x cols` zero matrix,
    /// accumulating in row order of `x`.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], out_rows: usize) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        if idx.len() != xv.rows() {
            return Err(NumericsError::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: xv.shape.clone(),
                rhs: vec![idx.len()],
            });
        }
        let c = xv.cols();
        let mut out = Tensor::zeros(out_rows, c);
        for (k, &i) in idx.iter().enumerate() {
            if i >= out_rows {
                return Err(NumericsError::IndexOutOfRange {
                    index: i,
                    len: out_rows,
                });
            }
            for (o, v) in out.data[i * c..(i + 1) * c].iter_mut().zip(xv.row(k)) {
                *o += v;
            }
        }
        Ok(self.push(Op::ScatterAddRows(x, idx.to_vec()), out))
    }

    /// Row-wise dot product of two equally shaped matrices, `m x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dims() != y.dims() {
            return Err(mismatch("row_dot", x, y));
        }
        let data = (0..x.rows())
            .map(|r| x.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum())
            .collect();
        let out = Tensor::matrix(x.rows(), 1, data)?;
        Ok(self.push(Op::RowDot(a, b), out))
    }

    /// Scales row `r` of `x` by `w[r]` where `w` is `m x 1`.
    pub fn mul_row_weights(&mut self, x: Var, w: Var) -> Result<Var, NumericsError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.cols() != 1 || wv.rows() != xv.rows() {
            return Err(mismatch("mul_row_weights", xv, wv));
        }
        let c = xv.cols();
        let data = xv.data.iter().enumerate().map(|(i, v)| v * wv.data[i / c]).collect();
        let out = Tensor::matrix(xv.rows(), c, data)?;
        Ok(self.push(Op::MulRowWeights(x, w), out))
    }

    /// Softmax over the entries of an `m x 1` column, grouped by
    /// `segments[r]`.
    pub fn segment_softmax(&mut self, x: Var, segments: &[usize]) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        if xv.cols() != 1 || xv.rows() != segments.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "segment_softmax",
                lhs: xv.shape.clone(),
                rhs: vec![segments.len()],
            });
        }
        let n_seg = segments.iter().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (v, &s) in xv.data.iter().zip(segments) {
            max[s] = max[s].max(*v);
        }
        let exps: Vec<f64> = xv.data.iter().zip(segments).map(|(v, &s)| (v - max[s]).exp()).collect();
        let mut sums = vec![0.0; n_seg];
        for (e, &s) in exps.iter().zip(segments) {
            sums[s] += e;
        }
        let data = exps.iter().zip(segments).map(|(e, &s)| e / sums[s]).collect();
        let out = Tensor::matrix(xv.rows(), 1, data)?;
        Ok(self.push(Op::SegmentSoftmax(x, segments.to_vec()), out))
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var, NumericsError> {
        let out = mean_rows(self.value(x))?;
        Ok(self.push(Op::MeanRows(x), out))
    }

    /// Softmax over a `1 x n` vector.
    pub fn softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let out = Tensor::row_vector(softmax(&xv.data)?);
        Ok(self.push(Op::Softmax(x), out))
    }

    pub fn cross_entropy(&mut self, probs: Var, label: usize) -> Result<Var, NumericsError> {
        let loss = cross_entropy(&self.value(probs).data, label)?;
        Ok(self.push(Op::CrossEntropy(probs, label), Tensor::scalar(loss)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, out: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0; self.value(out).len()]);
        let mut param_grads: Vec<Option<Vec<f64>>> = vec![None; self.params.len()];

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(id) => accumulate(&mut param_grads[id.0], &g),
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k) = av.dims();
                    let n = bv.cols();
                    // dA = G B^T, dB = A^T G
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        for p in 0..k {
                            let brow = &bv.data[p * n..(p + 1) * n];
                            da[r * k + p] = g[r * n..(r + 1) * n].iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av_rp = av.data[r * k + p];
                            if av_rp == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += av_rp * gv;
                            }
                        }
                    }
                    accumulate(&mut grads[a.0], &da);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], &g);
                    accumulate(&mut grads[b.0], &g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da: Vec<f64> = g.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.iter().zip(&av.data).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[a.0], &da);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(&xv.data)
                        .map(|(gv, v)| if *v > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::Scale(x, c) => {
                    let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::MulScalar(x, s) => {
                    let sv = self.value(*s).data[0];
                    let xv = self.value(*x);
                    let dx: Vec<f64> = g.iter().map(|v| v * sv).collect();
                    let ds: f64 = g.iter().zip(&xv.data).map(|(a, b)| a * b).sum();
                    accumulate(&mut grads[x.0], &dx);
                    accumulate(&mut grads[s.0], &[ds]);
                }
                Op::ConcatRows(xs) => {
                    let mut offset = 0;
                    for x in xs {
                        let len = self.value(*x).len();
                        accumulate(&mut grads[x.0], &g[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::ConcatCols(xs) => {
                    let out = node.value.as_ref().expect("value");
                    let (rows, total) = out.dims();
                    let mut col = 0;
                    for x in xs {
                        let c = self.value(*x).cols();
                        let mut dx = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            dx.extend_from_slice(&g[r * total + col..r * total + col + c]);
                        }
                        accumulate(&mut grads[x.0], &dx);
                        col += c;
                    }
                }
                Op::GatherRows(x, idx) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let mut dx = vec![0.0; xv.len()];
                    for (k, &r) in idx.iter().enumerate() {
                        for (d, gv) in dx[r * c..(r + 1) * c].iter_mut().zip(&g[k * c..(k + 1) * c]) {
                            *d += gv;
                        }
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::ScatterAddRows(x, idx) => {
                    let c = self.value(*x).cols();
                    let mut dx = Vec::with_capacity(idx.len() * c);
                    for &r in idx {
                        dx.extend_from_slice(&g[r * c..(r + 1) * c]);
                    }
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let c = av.cols();
                    let da: Vec<f64> = bv.data.iter().enumerate().map(|(i, v)| v * g[i / c]).collect();
                    let db: Vec<f64> = av.data.iter().enumerate().map(|(i, v)| v * g[i / c]).collect();
                    accumulate(&mut grads[a.0], &da);
                    accumulate(&mut grads[b.0], &db);
                }
                Op::MulRowWeights(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let c = xv.cols();
                    let dx: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * wv.data[i / c]).collect();
                    let dw: Vec<f64> = (0..xv.rows())
                        .map(|r| g[r * c..(r + 1) * c].iter().zip(xv.row(r)).map(|(p, q)| p * q).sum())
                        .collect();
                    accumulate(&mut grads[x.0], &dx);
                    accumulate(&mut grads[w.0], &dw);
                }
                Op::SegmentSoftmax(x, segments) => {
                    let y = &node.value.as_ref().expect("value").data;
                    let n_seg = segments.iter().max().map_or(0, |m| m + 1);
                    let mut dots = vec![0.0; n_seg];
                    for ((gv, yv), &s) in g.iter().zip(y).zip(segments) {
                        dots[s] += gv * yv;
                    }
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .zip(segments)
                        .map(|((gv, yv), &s)| yv * (gv - dots[s]))
                        .collect();
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::MeanRows(x) => {
                    let xv = self.value(*x);
                    let (m, c) = xv.dims();
                    let dx: Vec<f64> = (0..m * c).map(|i| g[i % c] / m as f64).collect();
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::Softmax(x) => {
                    let y = &node.value.as_ref().expect("value").data;
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let dx: Vec<f64> = g.iter().zip(y).map(|(gv, yv)| yv * (gv - dot)).collect();
                    accumulate(&mut grads[x.0], &dx);
                }
                Op::CrossEntropy(p, label) => {
                    let pv = self.value(*p);
                    let mut dp = vec![0.0; pv.len()];
                    let pl = pv.data[*label];
                    if pl > PROB_FLOOR {
                        dp[*label] = -g[0] / pl;
                    }
                    accumulate(&mut grads[p.0], &dp);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads[x.0], &vec![g[0]; n]);
                }
            }
        }
        Gradients(param_grads)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(buf) => {
            for (b, v) in buf.iter_mut().zip(g) {
                *b += v;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

// ---- gradient check --------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Relative error used throughout: `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Evaluates a scalar loss built by `f` on a fresh tape.
pub fn eval_loss<F>(f: &F, params: &ParamStore) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, NumericsError>,
{
    let mut tape = Tape::new(params);
    let out = f(&mut tape)?;
    let v = tape.value(out).data[0];
    if !v.is_finite() {
        return Err(NumericsError::NonFiniteLoss(v));
    }
    Ok(v)
}

pub fn analytic_gradients<F>(f: &F, params: &ParamStore) -> Result<Gradients, NumericsError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, NumericsError>,
{
    let mut tape = Tape::new(params);
    let out = f(&mut tape)?;
    let v = tape.value(out).data[0];
    if !v.is_finite() {
        return Err(NumericsError::NonFiniteLoss(v));
    }
    Ok(tape.backward(out))
}

/// Compares reverse-mode gradients with central differences on every
/// entry of every trainable parameter.
pub fn grad_check<F>(f: &F, params: &ParamStore, eps: f64) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, NumericsError>,
{
    let analytic = analytic_gradients(f, params)?;
    grad_check_against(f, params, eps, &analytic)
}

/// Like [`grad_check`] but with caller-supplied analytic gradients.
pub fn grad_check_against<F>(
    f: &F,
    params: &ParamStore,
    eps: f64,
    analytic: &Gradients,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Tape<'_>) -> Result<Var, NumericsError>,
{
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for (id, name, tensor) in params.iter() {
        if !tensor.requires_grad {
            continue;
        }
        for j in 0..tensor.len() {
            let orig = tensor.data[j];
            work.get_mut(id).data[j] = orig + eps;
            let plus = eval_loss(f, &work)?;
            work.get_mut(id).data[j] = orig - eps;
            let minus = eval_loss(f, &work)?;
            work.get_mut(id).data[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g[j]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = name.to_string();
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(matmul(&Tensor::identity(3), &x).unwrap(), x);
        assert!(matches!(
            matmul(&x, &x),
            Err(NumericsError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn relu_and_mean() {
        let r = relu(&Tensor::row_vector(vec![-1.0, 0.0, 2.0]));
        assert_eq!(r.data, vec![0.0, 0.0, 2.0]);
        let row = Tensor::row_vector(vec![1.5, -2.0]);
        assert_eq!(mean_rows(&row).unwrap(), row);
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
        assert_eq!(softmax(&[]), Err(NumericsError::EmptyVector));
        let a = softmax(&[0.3, -1.2, 2.5]).unwrap();
        let b = softmax(&[7.3, 5.8, 9.5]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_cases() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
        assert!((cross_entropy(&[0.5, 0.5], 1).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(matches!(cross_entropy(&[1.0], 3), Err(NumericsError::BadLabel { .. })));
    }

    #[test]
    fn sum_of_squares_gradcheck() {
        let mut store = ParamStore::new();
        store
            .insert("theta", Tensor::row_vector(vec![1.0, 2.0]).trainable())
            .unwrap();
        let f = |t: &mut Tape<'_>| {
            let th = t.param_named("theta")?;
            let sq = t.mul(th, th)?;
            Ok(t.sum(sq))
        };
        let g = analytic_gradients(&f, &store).unwrap();
        assert_eq!(g.0[0].as_deref(), Some(&[2.0, 4.0][..]));
        let report = grad_check(&f, &store, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.checked, 2);
    }

    #[test]
    fn param_store_order_and_accumulation() {
        let mut store = ParamStore::new();
        store.insert("b", Tensor::scalar(1.0).trainable()).unwrap();
        store.insert("a", Tensor::scalar(2.0)).unwrap();
        assert!(store.insert("a", Tensor::scalar(0.0)).is_err());
        let names: Vec<&str> = store.iter().map(|(_, n, _)| n).collect();
        assert_eq!(names, ["b", "a"]);
        let g = Gradients(vec![Some(vec![0.5]), Some(vec![1.0])]);
        store.accumulate_grads(&g);
        store.accumulate_grads(&g);
        assert_eq!(store.by_name("b").unwrap().grad.as_deref(), Some(&[1.0][..]));
        assert_eq!(store.by_name("a").unwrap().grad, None);
    }
}
