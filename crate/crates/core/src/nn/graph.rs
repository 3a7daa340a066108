//! Tape-based reverse-mode differentiation over 2-D tensors.

use std::collections::HashMap;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.044_715;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Softmax(Var),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Dropout(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, probs: Vec<f64>, targets: Vec<usize> },
    SquaredError(Var, Vec<f64>),
    AbsoluteError(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Computation tape. Nodes are appended in evaluation order, so walking them
/// backwards is a valid reverse topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn dims(t: &Tensor) -> (usize, usize) {
    match t.shape.len() {
        2 => (t.shape[0], t.shape[1]),
        _ => (1, t.numel()),
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::InvalidShape(format!("{op}: incompatible shapes {:?} and {:?}", a.shape, b.shape))
}

fn gelu(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (k * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let u = k * (x + GELU_C * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * k * (1.0 + 3.0 * GELU_C * x * x)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Leaf bound to a stored parameter. Repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((n, k), (k2, m)) = (dims(ta), dims(tb));
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(&ta.data, &tb.data, n, k, m, &mut out);
        Ok(self.push(Tensor { shape: vec![n, m], data: out }, Op::MatMul(a, b)))
    }

    /// `a b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((n, k), (m, k2)) = (dims(ta), dims(tb));
        if k != k2 {
            return Err(shape_err("matmul_nt", ta, tb));
        }
        let mut out = vec![0.0; n * m];
        matmul_nt_into(&ta.data, &tb.data, n, k, m, &mut out);
        Ok(self.push(Tensor { shape: vec![n, m], data: out }, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err("add", ta, tb));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let shape = ta.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b)))
    }

    /// Add a row vector `b` (length = columns of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, m) = dims(ta);
        if tb.numel() != m {
            return Err(shape_err("add_row", ta, tb));
        }
        let mut data = ta.data.clone();
        for i in 0..n {
            for (x, y) in data[i * m..(i + 1) * m].iter_mut().zip(&tb.data) {
                *x += y;
            }
        }
        Ok(self.push(Tensor { shape: vec![n, m], data }, Op::AddRow(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err("mul", ta, tb));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let shape = ta.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|x| x * s).collect(),
        };
        self.push(t, Op::Scale(a, s))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (n, m) = dims(ta);
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = ta.data[i * m + j];
            }
        }
        self.push(Tensor { shape: vec![m, n], data }, Op::Transpose(a))
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidShape("concat of nothing".into()))?;
        let n = dims(self.value(*first)).0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = dims(self.value(*p));
            if r != n {
                return Err(shape_err("concat_cols", self.value(*first), self.value(*p)));
            }
            widths.push(c);
        }
        let m: usize = widths.iter().sum();
        let mut data = vec![0.0; n * m];
        let mut off = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let src = &self.value(*p).data;
            for i in 0..n {
                data[i * m + off..i * m + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        Ok(self.push(Tensor { shape: vec![n, m], data }, Op::ConcatCols(parts.to_vec())))
    }

    /// Stack matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidShape("concat of nothing".into()))?;
        let m = dims(self.value(*first)).1;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            let t = self.value(*p);
            let (r, c) = dims(t);
            if c != m {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            data.extend_from_slice(&t.data);
            n += r;
        }
        Ok(self.push(Tensor { shape: vec![n, m], data }, Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        let (n, m) = dims(ta);
        if start > end || end > m {
            return Err(Error::OutOfRange { index: end, limit: m });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&ta.data[i * m + start..i * m + end]);
        }
        Ok(self.push(Tensor { shape: vec![n, w], data }, Op::SliceCols(a, start)))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        let (n, m) = dims(ta);
        if start > end || end > n {
            return Err(Error::OutOfRange { index: end, limit: n });
        }
        let data = ta.data[start * m..end * m].to_vec();
        Ok(self.push(Tensor { shape: vec![end - start, m], data }, Op::SliceRows(a, start)))
    }

    /// Rows picked by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let (n, m) = dims(ta);
        let mut data = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            if i >= n {
                return Err(Error::OutOfRange { index: i, limit: n });
            }
            data.extend_from_slice(&ta.data[i * m..(i + 1) * m]);
        }
        Ok(self.push(Tensor { shape: vec![idx.len(), m], data }, Op::GatherRows(a, idx.to_vec())))
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is masked
    /// to probability zero.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Var {
        let ta = self.value(a);
        let (n, m) = dims(ta);
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            let lim = if causal { (i + 1).min(m) } else { m };
            let row = &ta.data[i * m..i * m + lim];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * m..i * m + lim];
            let mut z = 0.0;
            for (o, x) in out.iter_mut().zip(row) {
                *o = (x - mx).exp();
                z += *o;
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        self.push(Tensor { shape: vec![n, m], data }, Op::Softmax(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|&x| gelu(x)).collect(),
        };
        self.push(t, Op::Gelu(a))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let (n, m) = dims(tx);
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.numel() != m || tb.numel() != m {
            return Err(shape_err("layer_norm", tx, tg));
        }
        let mut xhat = vec![0.0; n * m];
        let mut rstd = vec![0.0; n];
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            let row = &tx.data[i * m..(i + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = r;
            for j in 0..m {
                let h = (row[j] - mean) * r;
                xhat[i * m + j] = h;
                data[i * m + j] = h * tg.data[j] + tb.data[j];
            }
        }
        Ok(self.push(
            Tensor { shape: vec![n, m], data },
            Op::LayerNorm { x, gain, bias, xhat, rstd },
        ))
    }

    /// Inverted dropout: zero each entry with probability `p` and scale the
    /// survivors by `1 / (1 - p)`. Identity when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut RngStream) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let ta = self.value(a);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..ta.numel())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let t = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().zip(&mask).map(|(x, k)| x * k).collect(),
        };
        Ok(self.push(t, Op::Dropout(a, mask)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.numel().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (n, m) = dims(t);
        if targets.len() != n || n == 0 {
            return Err(Error::InvalidShape(format!("{} targets for {n} rows", targets.len())));
        }
        let mut probs = vec![0.0; n * m];
        let mut loss = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            if y >= m {
                return Err(Error::OutOfRange { index: y, limit: m });
            }
            let row = &t.data[i * m..(i + 1) * m];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            for j in 0..m {
                probs[i * m + j] = (row[j] - mx).exp() / z;
            }
            loss += (mx - row[y]) + z.ln();
        }
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy { logits, probs, targets: targets.to_vec() },
        ))
    }

    /// Mean over rows of the squared Euclidean distance to `target`.
    pub fn squared_error(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let t = self.value(pred);
        let n = dims(t).0;
        if target.len() != t.numel() || n == 0 {
            return Err(Error::InvalidShape(format!("target of {} values for shape {:?}", target.len(), t.shape)));
        }
        let s: f64 = t.data.iter().zip(target).map(|(p, y)| (p - y).powi(2)).sum();
        Ok(self.push(Tensor::scalar(s / n as f64), Op::SquaredError(pred, target.to_vec())))
    }

    /// Mean over rows of the L1 distance to `target`.
    pub fn absolute_error(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let t = self.value(pred);
        let n = dims(t).0;
        if target.len() != t.numel() || n == 0 {
            return Err(Error::InvalidShape(format!("target of {} values for shape {:?}", target.len(), t.shape)));
        }
        let s: f64 = t.data.iter().zip(target).map(|(p, y)| (p - y).abs()).sum();
        Ok(self.push(Tensor::scalar(s / n as f64), Op::AbsoluteError(pred, target.to_vec())))
    }

    /// Gradients of the scalar `loss` with respect to every parameter that
    /// took part in the computation.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        let mut grads = Gradients::zeros(store);
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Graph::backward`], accumulating into existing gradients.
    pub fn backward_into(&self, loss: Var, out: &mut Gradients) -> Result<()> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::InvalidLoss(lt.shape.clone()));
        }
        let mut g: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        g[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, &dy),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ((n, k), (_, m)) = (dims(ta), dims(tb));
                    let mut da = vec![0.0; n * k];
                    matmul_nt_into(&dy, &tb.data, n, m, k, &mut da);
                    let mut db = vec![0.0; k * m];
                    matmul_tn_into(&ta.data, &dy, n, k, m, &mut db);
                    add_to(&mut g, *a, &da);
                    add_to(&mut g, *b, &db);
                }
                Op::MatMulNt(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ((n, k), (m, _)) = (dims(ta), dims(tb));
                    let mut da = vec![0.0; n * k];
                    matmul_into(&dy, &tb.data, n, m, k, &mut da);
                    let mut db = vec![0.0; m * k];
                    matmul_tn_into(&dy, &ta.data, n, m, k, &mut db);
                    add_to(&mut g, *a, &da);
                    add_to(&mut g, *b, &db);
                }
                Op::Add(a, b) => {
                    add_to(&mut g, *a, &dy);
                    add_to(&mut g, *b, &dy);
                }
                Op::AddRow(a, b) => {
                    let (n, m) = dims(y);
                    let mut db = vec![0.0; m];
                    for i in 0..n {
                        for (d, v) in db.iter_mut().zip(&dy[i * m..(i + 1) * m]) {
                            *d += v;
                        }
                    }
                    add_to(&mut g, *a, &dy);
                    add_to(&mut g, *b, &db);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da: Vec<f64> = dy.iter().zip(&tb.data).map(|(d, v)| d * v).collect();
                    let db: Vec<f64> = dy.iter().zip(&ta.data).map(|(d, v)| d * v).collect();
                    add_to(&mut g, *a, &da);
                    add_to(&mut g, *b, &db);
                }
                Op::Scale(a, s) => {
                    let da: Vec<f64> = dy.iter().map(|d| d * s).collect();
                    add_to(&mut g, *a, &da);
                }
                Op::Transpose(a) => {
                    let (m, n) = dims(y);
                    let mut da = vec![0.0; n * m];
                    for i in 0..n {
                        for j in 0..m {
                            da[i * m + j] = dy[j * n + i];
                        }
                    }
                    add_to(&mut g, *a, &da);
                }
                Op::ConcatCols(parts) => {
                    let (n, m) = dims(y);
                    let mut off = 0;
                    for p in parts {
                        let w = dims(self.value(*p)).1;
                        let mut dp = Vec::with_capacity(n * w);
                        for i in 0..n {
                            dp.extend_from_slice(&dy[i * m + off..i * m + off + w]);
                        }
                        add_to(&mut g, *p, &dp);
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.value(*p).numel();
                        add_to(&mut g, *p, &dy[off..off + len]);
                        off += len;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (n, m) = dims(self.value(*a));
                    let w = dims(y).1;
                    let mut da = vec![0.0; n * m];
                    for i in 0..n {
                        da[i * m + start..i * m + start + w].copy_from_slice(&dy[i * w..(i + 1) * w]);
                    }
                    add_to(&mut g, *a, &da);
                }
                Op::SliceRows(a, start) => {
                    let ta = self.value(*a);
                    let m = dims(ta).1;
                    let mut da = vec![0.0; ta.numel()];
                    da[start * m..start * m + dy.len()].copy_from_slice(&dy);
                    add_to(&mut g, *a, &da);
                }
                Op::GatherRows(a, idx) => {
                    let ta = self.value(*a);
                    let m = dims(ta).1;
                    let mut da = vec![0.0; ta.numel()];
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, v) in da[i * m..(i + 1) * m].iter_mut().zip(&dy[r * m..(r + 1) * m]) {
                            *d += v;
                        }
                    }
                    add_to(&mut g, *a, &da);
                }
                Op::Softmax(a) => {
                    let (n, m) = dims(y);
                    let mut da = vec![0.0; n * m];
                    for i in 0..n {
                        let p = &y.data[i * m..(i + 1) * m];
                        let d = &dy[i * m..(i + 1) * m];
                        let dot: f64 = p.iter().zip(d).map(|(x, z)| x * z).sum();
                        for j in 0..m {
                            da[i * m + j] = p[j] * (d[j] - dot);
                        }
                    }
                    add_to(&mut g, *a, &da);
                }
                Op::Gelu(a) => {
                    let ta = self.value(*a);
                    let da: Vec<f64> = dy.iter().zip(&ta.data).map(|(d, &x)| d * gelu_grad(x)).collect();
                    add_to(&mut g, *a, &da);
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let (n, m) = dims(y);
                    let tg = self.value(*gain);
                    let mut dx = vec![0.0; n * m];
                    let mut dg = vec![0.0; m];
                    let mut db = vec![0.0; m];
                    for i in 0..n {
                        let d = &dy[i * m..(i + 1) * m];
                        let h = &xhat[i * m..(i + 1) * m];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..m {
                            dg[j] += d[j] * h[j];
                            db[j] += d[j];
                            let dh = d[j] * tg.data[j];
                            s1 += dh;
                            s2 += dh * h[j];
                        }
                        let (s1, s2) = (s1 / m as f64, s2 / m as f64);
                        for j in 0..m {
                            let dh = d[j] * tg.data[j];
                            dx[i * m + j] = rstd[i] * (dh - s1 - h[j] * s2);
                        }
                    }
                    add_to(&mut g, *x, &dx);
                    add_to(&mut g, *gain, &dg);
                    add_to(&mut g, *bias, &db);
                }
                Op::Dropout(a, mask) => {
                    let da: Vec<f64> = dy.iter().zip(mask).map(|(d, k)| d * k).collect();
                    add_to(&mut g, *a, &da);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).numel();
                    add_to(&mut g, *a, &vec![dy[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).numel();
                    add_to(&mut g, *a, &vec![dy[0] / n.max(1) as f64; n]);
                }
                Op::CrossEntropy { logits, probs, targets } => {
                    let (n, m) = dims(self.value(*logits));
                    let s = dy[0] / n as f64;
                    let mut da: Vec<f64> = probs.iter().map(|p| p * s).collect();
                    for (i, &t) in targets.iter().enumerate() {
                        da[i * m + t] -= s;
                    }
                    add_to(&mut g, *logits, &da);
                }
                Op::SquaredError(p, target) => {
                    let tp = self.value(*p);
                    let s = 2.0 * dy[0] / dims(tp).0 as f64;
                    let da: Vec<f64> = tp.data.iter().zip(target).map(|(x, t)| s * (x - t)).collect();
                    add_to(&mut g, *p, &da);
                }
                Op::AbsoluteError(p, target) => {
                    let tp = self.value(*p);
                    let s = dy[0] / dims(tp).0 as f64;
                    let da: Vec<f64> = tp
                        .data
                        .iter()
                        .zip(target)
                        .map(|(x, t)| {
                            let r = x - t;
                            if r > 0.0 {
                                s
                            } else if r < 0.0 {
                                -s
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    add_to(&mut g, *p, &da);
                }
            }
        }
        Ok(())
    }
}

fn add_to(g: &mut [Option<Vec<f64>>], v: Var, d: &[f64]) {
    match &mut g[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(d) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(d.to_vec()),
    }
}
