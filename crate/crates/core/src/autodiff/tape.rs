//! Define-by-run reverse-mode tape.
//!
//! Every op appends a node whose parents already exist, so node order is a
//! topological order and the backward pass is a single reverse sweep.

use std::sync::Arc;

use crate::autodiff::sparse::CsrMatrix;
use crate::autodiff::tensor::gemm;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    AddColumn(Var, Var),
    AddRow(Var, Var),
    SoftmaxRows(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Transpose(Var),
    Sum(Var),
    Mse(Var, Var),
    CrossEntropy(Var, Vec<usize>),
    SparseMatMul(Arc<CsrMatrix>, Var),
    GatherCols(Var, Vec<usize>),
    SymNormalize(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Leaf gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. leaf `v`; zeros when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite output from {op:?}");
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

    /// Differentiable input (trainable parameter or θ).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("elementwise", x, y)?;
        let vals = x
            .values()
            .iter()
            .zip(y.values())
            .map(|(&p, &q)| match kind {
                Binary::Add => p + q,
                Binary::Sub => p - q,
                Binary::Mul => p * q,
            })
            .collect();
        let out = Tensor::from_parts(x.shape().to_vec(), vals);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let out = match kind {
            Unary::Sigmoid => self.value(a).map(sigmoid),
            Unary::Tanh => self.value(a).map(f64::tanh),
            Unary::Relu => self.value(a).map(|v| v.max(0.0)),
        };
        let rg = self.rg(a);
        self.push(out, Op::Unary(kind, a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// `x[m×n] + b[m×1]`, adding the column `b` to every column of `x`.
    pub fn add_column(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        let (bm, bn) = self.value(b).dims2()?;
        if bm != m || bn != 1 {
            return Err(Error::shape("add_column", self.value(x).shape(), self.value(b).shape()));
        }
        let bv = self.value(b).values();
        let mut vals = self.value(x).values().to_vec();
        for i in 0..m {
            for v in &mut vals[i * n..(i + 1) * n] {
                *v += bv[i];
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], vals), Op::AddColumn(x, b), rg))
    }

    /// `x[m×n] + b[1×n]`, adding the row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(b).shape() != [1, n] {
            return Err(Error::shape("add_row", self.value(x).shape(), self.value(b).shape()));
        }
        let bv = self.value(b).values();
        let mut vals = self.value(x).values().to_vec();
        for row in vals.chunks_mut(n.max(1)) {
            for (v, b) in row.iter_mut().zip(bv) {
                *v += b;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], vals), Op::AddRow(x, b), rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let src = self.value(a).values();
        let mut vals = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in vals[i * n..(i + 1) * n].iter_mut().zip(row) {
                *o = (v - max).exp();
                z += *o;
            }
            for o in &mut vals[i * n..(i + 1) * n] {
                *o /= z;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![m, n], vals), Op::SoftmaxRows(a), rg))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of zero parts".into()))?;
        let cols = self.value(*first).dims2()?.1;
        let mut rows = 0;
        let mut vals = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != cols {
                return Err(Error::shape("concat_rows", self.value(*first).shape(), self.value(p).shape()));
            }
            rows += r;
            vals.extend_from_slice(self.value(p).values());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_parts(vec![rows, cols], vals), Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..start+len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start + len > m {
            return Err(Error::shape("slice_rows", self.value(a).shape(), &[start + len, n]));
        }
        let vals = self.value(a).values()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![len, n], vals), Op::SliceRows(a, start), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::from_parts(vec![1, 1], vec![self.value(a).sum()]);
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        same_shape("mse", p, t)?;
        let n = p.len().max(1) as f64;
        let s: f64 = p.values().iter().zip(t.values()).map(|(a, b)| (a - b) * (a - b)).sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::from_parts(vec![1, 1], vec![s / n]), Op::Mse(pred, target), rg))
    }

    /// Mean softmax cross-entropy; `logits` rows are samples.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (m, n) = self.value(logits).dims2()?;
        if labels.len() != m {
            return Err(Error::shape("cross_entropy", &[m, n], &[labels.len()]));
        }
        let src = self.value(logits).values();
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= n {
                return Err(Error::Contract(format!("label {y} out of {n} classes")));
            }
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::from_parts(vec![1, 1], vec![total / m.max(1) as f64]),
            Op::CrossEntropy(logits, labels.to_vec()),
            rg,
        ))
    }

    /// `sparse · x` where the sparse matrix is a constant.
    pub fn sparse_matmul(&mut self, sparse: Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let out = sparse.matmul(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SparseMatMul(sparse, x), rg))
    }

    /// Selects columns of `a` by index (repeats allowed).
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
            return Err(Error::Contract(format!("gather_cols index {bad} ≥ {n}")));
        }
        let src = self.value(a).values();
        let k = idx.len();
        let mut vals = vec![0.0; m * k];
        for i in 0..m {
            for (j, &c) in idx.iter().enumerate() {
                vals[i * k + j] = src[i * n + c];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![m, k], vals), Op::GatherCols(a, idx.to_vec()), rg))
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with `D` the row sums of `A + I`.
    pub fn sym_normalize(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if m != n {
            return Err(Error::shape("sym_normalize", self.value(a).shape(), &[m, m]));
        }
        let src = self.value(a).values();
        let s = sym_norm_scales(src, n)?;
        let mut vals = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mij = src[i * n + j] + if i == j { 1.0 } else { 0.0 };
                vals[i * n + j] = s[i] * mij * s[j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![n, n], vals), Op::SymNormalize(a), rg))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            // only leaf gradients are kept; intermediates are dropped as the sweep passes
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2()?;
                let n = bv.dims2()?.1;
                if self.rg(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.values(), false, bv.values(), true, &mut da, 0.0);
                    accumulate(&mut grads[a.0], Tensor::from_parts(av.shape().to_vec(), da));
                }
                if self.rg(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.values(), true, g.values(), false, &mut db, 0.0);
                    accumulate(&mut grads[b.0], Tensor::from_parts(bv.shape().to_vec(), db));
                }
            }
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let ga = match kind {
                        Binary::Add | Binary::Sub => g.clone(),
                        Binary::Mul => zip_map(g, bv, |gi, y| gi * y),
                    };
                    accumulate(&mut grads[a.0], ga);
                }
                if self.rg(*b) {
                    let gb = match kind {
                        Binary::Add => g.clone(),
                        Binary::Sub => g.map(|v| -v),
                        Binary::Mul => zip_map(g, av, |gi, x| gi * x),
                    };
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Unary(kind, a) => {
                let out = &node.value;
                let ga = match kind {
                    Unary::Sigmoid => zip_map(g, out, |gi, s| gi * s * (1.0 - s)),
                    Unary::Tanh => zip_map(g, out, |gi, t| gi * (1.0 - t * t)),
                    Unary::Relu => zip_map(g, self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 }),
                };
                accumulate(&mut grads[a.0], ga);
            }
            Op::Scale(a, s) => accumulate(&mut grads[a.0], g.map(|v| v * s)),
            Op::AddColumn(x, b) => {
                if self.rg(*x) {
                    accumulate(&mut grads[x.0], g.clone());
                }
                if self.rg(*b) {
                    let (m, n) = g.dims2()?;
                    let gb: Vec<f64> = (0..m).map(|i| g.values()[i * n..(i + 1) * n].iter().sum()).collect();
                    accumulate(&mut grads[b.0], Tensor::from_parts(self.value(*b).shape().to_vec(), gb));
                }
            }
            Op::AddRow(x, b) => {
                if self.rg(*x) {
                    accumulate(&mut grads[x.0], g.clone());
                }
                if self.rg(*b) {
                    let (_, n) = g.dims2()?;
                    let mut gb = vec![0.0; n];
                    for row in g.values().chunks(n.max(1)) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads[b.0], Tensor::from_parts(vec![1, n], gb));
                }
            }
            Op::SoftmaxRows(a) => {
                let s = &node.value;
                let (m, n) = s.dims2()?;
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    let sr = &s.values()[i * n..(i + 1) * n];
                    let gr = &g.values()[i * n..(i + 1) * n];
                    let dot: f64 = sr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..n {
                        ga[i * n + j] = sr[j] * (gr[j] - dot);
                    }
                }
                accumulate(&mut grads[a.0], Tensor::from_parts(vec![m, n], ga));
            }
            Op::ConcatRows(parts) => {
                let n = g.dims2()?.1;
                let mut offset = 0;
                for p in parts {
                    let shape = self.value(*p).shape().to_vec();
                    let r = self.value(*p).dims2()?.0;
                    if self.rg(*p) {
                        let vals = g.values()[offset * n..(offset + r) * n].to_vec();
                        accumulate(&mut grads[p.0], Tensor::from_parts(shape, vals));
                    }
                    offset += r;
                }
            }
            Op::SliceRows(a, start) => {
                let av = self.value(*a);
                let n = av.dims2()?.1;
                let mut ga = Tensor::zeros(av.shape());
                let len = g.len();
                ga.values_mut()[start * n..start * n + len].copy_from_slice(g.values());
                accumulate(&mut grads[a.0], ga);
            }
            Op::Transpose(a) => {
                let gt = g.transpose()?;
                let shape = self.value(*a).shape().to_vec();
                accumulate(&mut grads[a.0], gt.reshape(shape)?);
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape();
                accumulate(&mut grads[a.0], Tensor::filled(shape, g.item()));
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let c = 2.0 * g.item() / pv.len().max(1) as f64;
                let diff = zip_map(pv, tv, |a, b| c * (a - b));
                if self.rg(*t) {
                    accumulate(&mut grads[t.0], diff.map(|v| -v));
                }
                if self.rg(*p) {
                    accumulate(&mut grads[p.0], diff);
                }
            }
            Op::CrossEntropy(a, labels) => {
                let lv = self.value(*a);
                let (m, n) = lv.dims2()?;
                let scale = g.item() / m.max(1) as f64;
                let mut ga = vec![0.0; m * n];
                for (i, &y) in labels.iter().enumerate() {
                    let row = &lv.values()[i * n..(i + 1) * n];
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    for j in 0..n {
                        let p = (row[j] - max).exp() / z;
                        ga[i * n + j] = scale * (p - if j == y { 1.0 } else { 0.0 });
                    }
                }
                accumulate(&mut grads[a.0], Tensor::from_parts(vec![m, n], ga));
            }
            Op::SparseMatMul(sp, x) => {
                let gx = sp.transpose_matmul(g)?;
                let shape = self.value(*x).shape().to_vec();
                accumulate(&mut grads[x.0], gx.reshape(shape)?);
            }
            Op::GatherCols(a, idx) => {
                let av = self.value(*a);
                let (m, n) = av.dims2()?;
                let k = idx.len();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    for (j, &c) in idx.iter().enumerate() {
                        ga[i * n + c] += g.values()[i * k + j];
                    }
                }
                accumulate(&mut grads[a.0], Tensor::from_parts(av.shape().to_vec(), ga));
            }
            Op::SymNormalize(a) => {
                let av = self.value(*a);
                let n = av.dims2()?.0;
                let src = av.values();
                let s = sym_norm_scales(src, n)?;
                let gv = g.values();
                let m = |i: usize, j: usize| src[i * n + j] + if i == j { 1.0 } else { 0.0 };
                // dL/ds_i collects both the row and column occurrences of s_i.
                let mut ds = vec![0.0; n];
                for i in 0..n {
                    for j in 0..n {
                        ds[i] += gv[i * n + j] * m(i, j) * s[j];
                        ds[j] += gv[i * n + j] * s[i] * m(i, j);
                    }
                }
                // s_i = d_i^{-1/2}, d_i = Σ_j M_ij
                let dd: Vec<f64> = (0..n).map(|i| ds[i] * -0.5 * s[i].powi(3)).collect();
                let mut ga = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        ga[i * n + j] = gv[i * n + j] * s[i] * s[j] + dd[i];
                    }
                }
                accumulate(&mut grads[a.0], Tensor::from_parts(av.shape().to_vec(), ga));
            }
        }
        Ok(())
    }
}

fn sym_norm_scales(src: &[f64], n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|i| {
            let d: f64 = src[i * n..(i + 1) * n].iter().sum::<f64>() + 1.0;
            if d <= 0.0 {
                Err(Error::Contract(format!("non-positive degree {d} at row {i}")))
            } else {
                Ok(d.powf(-0.5))
            }
        })
        .collect()
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.values().iter().zip(b.values()).map(|(&x, &y)| f(x, y)).collect(),
    )
}
