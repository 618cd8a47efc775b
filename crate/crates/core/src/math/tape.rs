//! Tape-based reverse-mode differentiation over a fixed set of primitives.
//!
//! Every operation appends an entry to the [`Tape`] holding its forward value
//! and the handles of its inputs. Entries are appended in evaluation order,
//! which is a topological order of the computation, so [`Tape::backward`]
//! replays them once each in reverse.

use std::sync::Arc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf {
        param: Option<usize>,
    },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    GatherRows(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>),
    SegmentLogSumExp(Var, Arc<[usize]>),
    RowDot(Var, Var),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    /// Row-wise standardisation; the entry value holds x̂.
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    /// Column-wise standardisation over rows; the entry value holds x̂.
    BatchNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
}

#[derive(Debug)]
struct Entry {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape {
    entries: Vec<Entry>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<(usize, usize)>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    /// Gradient with respect to `var`, or zeros when `var` is unreachable.
    pub fn wrt(&self, var: Var) -> Tensor {
        let (r, c) = self.shapes[var.0];
        match &self.grads[var.0] {
            Some(g) => Tensor::from_matrix(r, c, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(r, c),
        }
    }

    /// Per-parameter gradients, summed over every leaf that referenced the
    /// parameter. Unreachable parameters receive zeros of the given shapes.
    pub fn params(&self, shapes: &[(usize, usize)]) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
        for &(pid, var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                for (o, v) in out[pid].data_mut().iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        out
    }
}

fn same_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rows() == b.rows() && a.cols() == b.cols() {
        Ok(())
    } else {
        Err(Error::dim(
            op,
            format!("[{}×{}] vs [{}×{}]", a.rows(), a.cols(), b.rows(), b.cols()),
        ))
    }
}

fn check_segments(seg: &[usize], rows: usize, nseg: usize) -> Result<()> {
    if seg.len() != rows {
        return Err(Error::dim(
            "segment",
            format!("{} segment ids for {rows} rows", seg.len()),
        ));
    }
    if let Some(&bad) = seg.iter().find(|&&s| s >= nseg) {
        return Err(Error::Index { index: bad, len: nseg });
    }
    Ok(())
}

fn unary(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|&v| f(v)).collect();
    Tensor::from_matrix(a.rows(), a.cols(), data).expect("unary shape")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.entries[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.entries.push(Entry { value, op, needs_grad });
        Var(self.entries.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.entries[v.0].needs_grad
    }

    /// Value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: None }, false)
    }

    /// Free leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: None }, true)
    }

    /// Leaf bound to parameter slot `pid`; its gradient is reported by
    /// [`Gradients::params`].
    pub fn param(&mut self, pid: usize, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf { param: Some(pid) }, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = super::tensor::matmul(av, bv)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    /// `x · W (+ b)` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(xw, b),
            None => Ok(xw),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims("add", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_matrix(av.rows(), av.cols(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims("sub", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::from_matrix(av.rows(), av.cols(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims("mul", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_matrix(av.rows(), av.cols(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// `a[n×q] + b[1×q]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::dim(
                "add_row",
                format!("[{}×{}] + [{}×{}]", av.rows(), av.cols(), bv.rows(), bv.cols()),
            ));
        }
        let q = av.cols();
        let data = rowwise(av.data(), q, |row, out| {
            out.extend(row.iter().zip(bv.data()).map(|(x, b)| x + b));
        });
        let value = Tensor::from_matrix(av.rows(), q, data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::AddRow(a, b), ng))
    }

    /// `a[n×q] ⊙ b[1×q]`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::dim(
                "mul_row",
                format!("[{}×{}] ⊙ [{}×{}]", av.rows(), av.cols(), bv.rows(), bv.cols()),
            ));
        }
        let q = av.cols();
        let data = rowwise(av.data(), q, |row, out| {
            out.extend(row.iter().zip(bv.data()).map(|(x, b)| x * b));
        });
        let value = Tensor::from_matrix(av.rows(), q, data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MulRow(a, b), ng))
    }

    /// `a[n×q] ⊙ c[n×1]`, scaling each row by its own coefficient.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (av, cv) = (self.value(a), self.value(c));
        if cv.cols() != 1 || cv.rows() != av.rows() {
            return Err(Error::dim(
                "mul_col",
                format!("[{}×{}] ⊙ [{}×{}]", av.rows(), av.cols(), cv.rows(), cv.cols()),
            ));
        }
        let q = av.cols().max(1);
        let mut data = Vec::with_capacity(av.data().len());
        for (row, c) in av.data().chunks_exact(q).zip(cv.data()) {
            data.extend(row.iter().map(|x| x * c));
        }
        let value = Tensor::from_matrix(av.rows(), av.cols(), data)?;
        let ng = self.ng(a) || self.ng(c);
        Ok(self.push(value, Op::MulCol(a, c), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = unary(self.value(a), |v| v * s);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = unary(self.value(a), |v| v + s);
        let ng = self.ng(a);
        self.push(value, Op::AddScalar(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = unary(self.value(a), f64::exp);
        let ng = self.ng(a);
        self.push(value, Op::Exp(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = unary(self.value(a), f64::ln);
        let ng = self.ng(a);
        self.push(value, Op::Log(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = unary(self.value(a), f64::tanh);
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = unary(self.value(a), |v| v.max(0.0));
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = unary(self.value(a), sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    /// Elementwise clamp into `[lo, hi]`; the gradient is zero outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = unary(self.value(a), |v| v.clamp(lo, hi));
        let ng = self.ng(a);
        self.push(value, Op::Clamp(a, lo, hi), ng)
    }

    /// Sum of all elements as a `1 × 1` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let av = self.value(a);
        let (n, q) = (av.rows(), av.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Index { index: bad, len: n });
        }
        let mut data = Vec::with_capacity(idx.len() * q);
        for &i in idx.iter() {
            data.extend_from_slice(&av.data()[i * q..(i + 1) * q]);
        }
        let value = Tensor::from_matrix(idx.len(), q, data)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::GatherRows(a, idx), ng))
    }

    /// Row `k` of the output is the sum of input rows with segment id `k`.
    pub fn segment_sum(&mut self, a: Var, seg: Arc<[usize]>, nseg: usize) -> Result<Var> {
        let av = self.value(a);
        check_segments(&seg, av.rows(), nseg)?;
        let q = av.cols();
        let mut out = Tensor::zeros(nseg, q);
        for (r, &s) in seg.iter().enumerate() {
            let src = &av.data()[r * q..(r + 1) * q];
            for (o, v) in out.data_mut()[s * q..(s + 1) * q].iter_mut().zip(src) {
                *o += v;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(out, Op::SegmentSum(a, seg), ng))
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    pub fn segment_softmax(&mut self, a: Var, seg: Arc<[usize]>, nseg: usize) -> Result<Var> {
        let av = self.value(a);
        check_segments(&seg, av.rows(), nseg)?;
        let value = segment_softmax_values(av, &seg, nseg);
        let ng = self.ng(a);
        Ok(self.push(value, Op::SegmentSoftmax(a, seg), ng))
    }

    /// Per-segment log-sum-exp of a column vector; empty segments give −∞.
    pub fn segment_logsumexp(&mut self, a: Var, seg: Arc<[usize]>, nseg: usize) -> Result<Var> {
        let av = self.value(a);
        if av.cols() != 1 {
            return Err(Error::dim("segment_logsumexp", "expects a column vector"));
        }
        check_segments(&seg, av.rows(), nseg)?;
        let mut max = vec![f64::NEG_INFINITY; nseg];
        for (r, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(av.data()[r]);
        }
        let mut acc = vec![0.0; nseg];
        for (r, &s) in seg.iter().enumerate() {
            acc[s] += (av.data()[r] - max[s]).exp();
        }
        let data = (0..nseg)
            .map(|s| {
                if max[s] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    max[s] + acc[s].ln()
                }
            })
            .collect();
        let ng = self.ng(a);
        Ok(self.push(Tensor::column(data), Op::SegmentLogSumExp(a, seg), ng))
    }

    /// Row-wise dot product `[m×d]·[m×d] → [m×1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_dims("row_dot", self.value(a), self.value(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let q = av.cols();
        let data = (0..av.rows())
            .map(|r| {
                av.data()[r * q..(r + 1) * q]
                    .iter()
                    .zip(&bv.data()[r * q..(r + 1) * q])
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::column(data), Op::RowDot(a, b), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let av = self.value(a);
        let q = av.cols();
        if start + width > q {
            return Err(Error::dim(
                "slice_cols",
                format!("columns {start}..{} of {q}", start + width),
            ));
        }
        let mut data = Vec::with_capacity(av.rows() * width);
        for r in 0..av.rows() {
            data.extend_from_slice(&av.data()[r * q + start..r * q + start + width]);
        }
        let value = Tensor::from_matrix(av.rows(), width, data)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::SliceCols(a, start), ng))
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Result<Var> {
        let q = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::dim("concat_rows", "no inputs"))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in &parts {
            let v = self.value(p);
            if v.cols() != q {
                return Err(Error::dim("concat_rows", "column counts differ"));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = Tensor::from_matrix(rows, q, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(value, Op::ConcatRows(parts), ng))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Result<Var> {
        let n = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        if parts.iter().any(|&p| self.value(p).rows() != n) {
            return Err(Error::dim("concat_cols", "row counts differ"));
        }
        let q: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(n * q);
        for r in 0..n {
            for &p in &parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Tensor::from_matrix(n, q, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(value, Op::ConcatCols(parts), ng))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = Tensor::from_matrix(rows, cols, self.value(a).data().to_vec())?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::Reshape(a), ng))
    }

    /// Standardise every row over its features: `(x − mean) / √(var + eps)`.
    pub fn layer_standardize(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (n, q) = (xv.rows(), xv.cols());
        let mut out = Tensor::zeros(n, q);
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = xv.row_slice(r);
            let mean = row.iter().sum::<f64>() / q as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / q as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (o, v) in out.data_mut()[r * q..(r + 1) * q].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::LayerNorm { x, inv_std }, ng)
    }

    /// Standardise every column over the rows using batch statistics.
    /// Returns the standardised value plus the biased batch mean and
    /// variance per column.
    pub fn batch_standardize(&mut self, x: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let xv = self.value(x);
        let (n, q) = (xv.rows(), xv.cols());
        if n < 2 {
            return Err(Error::DegenerateBatch { rows: n });
        }
        let mut mean = vec![0.0; q];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(xv.row_slice(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; q];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(xv.row_slice(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = Tensor::zeros(n, q);
        for r in 0..n {
            let row = xv.row_slice(r);
            for c in 0..q {
                out.data_mut()[r * q + c] = (row[c] - mean[c]) * inv_std[c];
            }
        }
        let ng = self.ng(x);
        let v = self.push(out, Op::BatchNorm { x, inv_std }, ng);
        Ok((v, mean, var))
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let n = self.entries.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let entry = &self.entries[idx];
            if !entry.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop(entry, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.entries.iter().map(|e| (e.value.rows(), e.value.cols())).collect();
        let params = self
            .entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| match e.op {
                Op::Leaf { param: Some(pid) } => Some((pid, Var(i))),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, shapes, params })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.entries[v.0].needs_grad {
            return None;
        }
        let len = self.entries[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn backprop(&self, entry: &Entry, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &entry.value;
        match &entry.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if let Some(da) = self.acc(grads, *a) {
                    // dA = dC · Bᵀ
                    gemm(m, n, k, g, n as isize, 1, bv.data(), 1, n as isize, 1.0, da);
                }
                if let Some(db) = self.acc(grads, *b) {
                    // dB = Aᵀ · dC
                    gemm(k, m, n, av.data(), 1, k as isize, g, n as isize, 1, 1.0, db);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.acc(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(d) = self.acc(grads, *b) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.acc(grads, *a) {
                    for i in 0..g.len() {
                        d[i] += g[i] * bv[i];
                    }
                }
                if let Some(d) = self.acc(grads, *b) {
                    for i in 0..g.len() {
                        d[i] += g[i] * av[i];
                    }
                }
            }
            Op::AddRow(a, b) => {
                let q = y.cols();
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if let Some(d) = self.acc(grads, *b) {
                    for gr in g.chunks_exact(q) {
                        d.iter_mut().zip(gr).for_each(|(d, g)| *d += g);
                    }
                }
            }
            Op::MulRow(a, b) => {
                let q = y.cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = self.acc(grads, *a) {
                    for (dr, gr) in d.chunks_exact_mut(q).zip(g.chunks_exact(q)) {
                        for ((d, g), b) in dr.iter_mut().zip(gr).zip(bv) {
                            *d += g * b;
                        }
                    }
                }
                if let Some(d) = self.acc(grads, *b) {
                    for (gr, ar) in g.chunks_exact(q).zip(av.chunks_exact(q)) {
                        for ((d, g), a) in d.iter_mut().zip(gr).zip(ar) {
                            *d += g * a;
                        }
                    }
                }
            }
            Op::MulCol(a, c) => {
                let q = y.cols().max(1);
                let (av, cv) = (self.value(*a).data(), self.value(*c).data());
                if let Some(d) = self.acc(grads, *a) {
                    for ((dr, gr), c) in d.chunks_exact_mut(q).zip(g.chunks_exact(q)).zip(cv) {
                        for (d, g) in dr.iter_mut().zip(gr) {
                            *d += g * c;
                        }
                    }
                }
                if let Some(d) = self.acc(grads, *c) {
                    for ((dc, gr), ar) in d.iter_mut().zip(g.chunks_exact(q)).zip(av.chunks_exact(q)) {
                        for (g, a) in gr.iter().zip(ar) {
                            *dc += g * a;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
            Op::Exp(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    for (i, gv) in g.iter().enumerate() {
                        d[i] += gv * y.data()[i];
                    }
                }
            }
            Op::Log(a) => {
                let av = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for (i, gv) in g.iter().enumerate() {
                        d[i] += gv / av[i];
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    for (i, gv) in g.iter().enumerate() {
                        let t = y.data()[i];
                        d[i] += gv * (1.0 - t * t);
                    }
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for (i, gv) in g.iter().enumerate() {
                        if av[i] > 0.0 {
                            d[i] += gv;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    for (i, gv) in g.iter().enumerate() {
                        let s = y.data()[i];
                        d[i] += gv * s * (1.0 - s);
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for (i, gv) in g.iter().enumerate() {
                        if av[i] >= *lo && av[i] <= *hi {
                            d[i] += gv;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(d) = self.acc(grads, *a) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::GatherRows(a, idx) => {
                let q = y.cols();
                if let Some(d) = self.acc(grads, *a) {
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..q {
                            d[i * q + c] += g[r * q + c];
                        }
                    }
                }
            }
            Op::SegmentSum(a, seg) => {
                let q = y.cols();
                if let Some(d) = self.acc(grads, *a) {
                    for (r, &s) in seg.iter().enumerate() {
                        for c in 0..q {
                            d[r * q + c] += g[s * q + c];
                        }
                    }
                }
            }
            Op::SegmentSoftmax(a, seg) => {
                let q = y.cols();
                let nseg = seg.iter().copied().max().map_or(0, |m| m + 1);
                if let Some(d) = self.acc(grads, *a) {
                    let mut dot = vec![0.0; nseg * q];
                    for (r, &s) in seg.iter().enumerate() {
                        for c in 0..q {
                            dot[s * q + c] += g[r * q + c] * y.data()[r * q + c];
                        }
                    }
                    for (r, &s) in seg.iter().enumerate() {
                        for c in 0..q {
                            let i = r * q + c;
                            d[i] += y.data()[i] * (g[i] - dot[s * q + c]);
                        }
                    }
                }
            }
            Op::SegmentLogSumExp(a, seg) => {
                let av = self.value(*a).data();
                if let Some(d) = self.acc(grads, *a) {
                    for (r, &s) in seg.iter().enumerate() {
                        let w = (av[r] - y.data()[s]).exp();
                        if w.is_finite() {
                            d[r] += g[s] * w;
                        }
                    }
                }
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let q = av.cols();
                if let Some(d) = self.acc(grads, *a) {
                    for r in 0..av.rows() {
                        for c in 0..q {
                            d[r * q + c] += g[r] * bv.data()[r * q + c];
                        }
                    }
                }
                if let Some(d) = self.acc(grads, *b) {
                    for r in 0..av.rows() {
                        for c in 0..q {
                            d[r * q + c] += g[r] * av.data()[r * q + c];
                        }
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let q_in = self.value(*a).cols();
                let w = y.cols();
                if let Some(d) = self.acc(grads, *a) {
                    for r in 0..y.rows() {
                        for c in 0..w {
                            d[r * q_in + start + c] += g[r * w + c];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(d) = self.acc(grads, p) {
                        d.iter_mut().zip(&g[offset..offset + len]).for_each(|(d, g)| *d += g);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let q = y.cols();
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(d) = self.acc(grads, p) {
                        for r in 0..y.rows() {
                            for c in 0..w {
                                d[r * w + c] += g[r * q + col + c];
                            }
                        }
                    }
                    col += w;
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let q = y.cols();
                if let Some(d) = self.acc(grads, *x) {
                    for r in 0..y.rows() {
                        let gr = &g[r * q..(r + 1) * q];
                        let yr = &y.data()[r * q..(r + 1) * q];
                        let sg: f64 = gr.iter().sum();
                        let sgy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        let inv = inv_std[r];
                        for c in 0..q {
                            d[r * q + c] += inv / q as f64 * (q as f64 * gr[c] - sg - yr[c] * sgy);
                        }
                    }
                }
            }
            Op::BatchNorm { x, inv_std } => {
                let (n, q) = (y.rows(), y.cols());
                if let Some(d) = self.acc(grads, *x) {
                    let mut sg = vec![0.0; q];
                    let mut sgy = vec![0.0; q];
                    for r in 0..n {
                        for c in 0..q {
                            sg[c] += g[r * q + c];
                            sgy[c] += g[r * q + c] * y.data()[r * q + c];
                        }
                    }
                    for r in 0..n {
                        for c in 0..q {
                            let i = r * q + c;
                            d[i] += inv_std[c] / n as f64 * (n as f64 * g[i] - sg[c] - y.data()[i] * sgy[c]);
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn segment_softmax_values(a: &Tensor, seg: &[usize], nseg: usize) -> Tensor {
    let q = a.cols();
    let mut max = vec![f64::NEG_INFINITY; nseg * q];
    for (r, &s) in seg.iter().enumerate() {
        for c in 0..q {
            let m = &mut max[s * q + c];
            *m = m.max(a.data()[r * q + c]);
        }
    }
    let mut out = Tensor::zeros(a.rows(), q);
    let mut total = vec![0.0; nseg * q];
    for (r, &s) in seg.iter().enumerate() {
        for c in 0..q {
            let e = (a.data()[r * q + c] - max[s * q + c]).exp();
            out.data_mut()[r * q + c] = e;
            total[s * q + c] += e;
        }
    }
    for (r, &s) in seg.iter().enumerate() {
        for c in 0..q {
            out.data_mut()[r * q + c] /= total[s * q + c];
        }
    }
    out
}

fn rowwise(data: &[f64], q: usize, mut f: impl FnMut(&[f64], &mut Vec<f64>)) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    if q > 0 {
        for row in data.chunks_exact(q) {
            f(row, &mut out);
        }
    }
    out
}
