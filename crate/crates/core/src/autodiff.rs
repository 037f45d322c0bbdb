//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its variables. Nodes are
//! appended in evaluation order, so the tape is already topologically sorted
//! and [`Graph::backward`] is a single reverse sweep. The op vocabulary is
//! the fixed set needed by the fusion network; there are no higher-order
//! derivatives.
//!
//! ```
//! use faf_core::autodiff::Graph;
//! use faf_core::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param("x", Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0, 6.0]);
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_acc, transpose_into, ParamSet, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRowBias(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
    Sum(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    },
    SpatialMean(Var),
    SpatialMax {
        x: Var,
        argmax: Vec<usize>,
    },
    ChannelScale(Var, Var),
    RowScale(Var, Var),
    StackRows(Vec<Var>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    name: Option<String>,
}

/// Recording of one forward evaluation.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(String, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `var`; zero when `var` does not
    /// influence the loss.
    pub fn wrt(&self, var: Var) -> Tensor<T> {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.0].clone()))
    }

    /// Gradients of every named parameter on the tape.
    pub fn params(&self) -> ParamSet<T> {
        self.params
            .iter()
            .map(|(name, var)| (name.clone(), self.wrt(*var)))
            .collect()
    }
}

fn shape_mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::dim(op, format!("{a:?} vs {b:?}"))
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softmax_rows<T: Scalar>(x: &Tensor<T>, rows: usize, cols: usize) -> Tensor<T> {
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(cols).take(rows) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    out
}

fn check_finite<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{op} produced a non-finite value")))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Inserts an input that is not differentiated.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Inserts a named trainable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].name = Some(name.into());
        v
    }

    /// Registers every tensor of `params` as a named leaf.
    pub fn params(&mut self, params: &ParamSet<T>) -> BTreeMap<String, Var> {
        params
            .iter()
            .map(|(name, t)| (name.clone(), self.param(name.clone(), t.clone())))
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_mismatch("add", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_mismatch("mul", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    /// `x[B×n] + bias[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.value(x).dims2("add_row_bias")?;
        let vb = self.value(bias);
        if vb.len() != n || vb.ndim() != 1 {
            return Err(shape_mismatch("add_row_bias", self.value(x).shape(), vb.shape()));
        }
        let mut out = self.value(x).clone();
        let bias_data = vb.data().to_vec();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(&bias_data) {
                *o = *o + b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddRowBias(x, bias), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// Row-wise softmax of a 2D tensor, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2("softmax")?;
        let out = softmax_rows(self.value(a), r, c);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Summed negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (r, c) = self.value(logits).dims2("softmax_cross_entropy")?;
        if labels.len() != r {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("{r} logit rows vs {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label: bad, classes: c });
        }
        let z = self.value(logits).data();
        let mut loss = T::zero();
        for (row, &label) in z.chunks(c).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss = loss + (lse - row[label]);
        }
        let out = Tensor::scalar(loss);
        check_finite("softmax_cross_entropy", &out)?;
        let probs = softmax_rows(self.value(logits), r, c);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Zero-padded 2D cross-correlation.
    ///
    /// `x` is `[B×Cin×H×W]`, `kernel` is `[Cout×Cin×kh×kw]`; every output
    /// channel sums over all input channels.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (b, cin, h, w) = self.value(x).dims4("conv2d")?;
        let (cout, kcin, kh, kw) = self.value(kernel).dims4("conv2d")?;
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be at least 1".into()));
        }
        if kcin != cin {
            return Err(shape_mismatch("conv2d", self.shape(x), self.shape(kernel)));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "kernel {kh}x{kw} larger than padded input {}x{} (input {:?}, pad {pad})",
                    h + 2 * pad,
                    w + 2 * pad,
                    self.shape(x)
                ),
            ));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let xv = self.value(x).data();
        let kv = self.value(kernel).data();
        let mut out = vec![T::zero(); b * cout * ho * wo];
        for bi in 0..b {
            for o in 0..cout {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = T::zero();
                        for c in 0..cin {
                            for u in 0..kh {
                                let Some(r) = (i * stride + u).checked_sub(pad).filter(|&r| r < h) else {
                                    continue;
                                };
                                for v in 0..kw {
                                    let Some(col) = (j * stride + v).checked_sub(pad).filter(|&q| q < w) else {
                                        continue;
                                    };
                                    acc = acc
                                        + xv[((bi * cin + c) * h + r) * w + col]
                                            * kv[((o * cin + c) * kh + u) * kw + v];
                                }
                            }
                        }
                        out[((bi * cout + o) * ho + i) * wo + j] = acc;
                    }
                }
            }
        }
        let out = Tensor::new([b, cout, ho, wo], out)?;
        let rg = self.rg(&[x, kernel]);
        Ok(self.push(out, Op::Conv2d { x, kernel, stride, pad }, rg))
    }

    /// Per-channel spatial mean: `[B×C×H×W] -> [B×C]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("spatial_mean")?;
        let area = T::of((h * w) as f64);
        let data = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|ch| ch.iter().copied().sum::<T>() / area)
            .collect();
        let out = Tensor::new([b, c], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SpatialMean(x), rg))
    }

    /// Per-channel spatial maximum: `[B×C×H×W] -> [B×C]`. The gradient goes
    /// to the first maximal element in row-major order.
    pub fn spatial_max(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("spatial_max")?;
        let mut argmax = Vec::with_capacity(b * c);
        let mut data = Vec::with_capacity(b * c);
        for (ci, ch) in self.value(x).data().chunks(h * w).enumerate() {
            let mut best = 0;
            for (k, &v) in ch.iter().enumerate() {
                if v > ch[best] {
                    best = k;
                }
            }
            argmax.push(ci * h * w + best);
            data.push(ch[best]);
        }
        let out = Tensor::new([b, c], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SpatialMax { x, argmax }, rg))
    }

    /// `x[B×C×H×W] * s[B×C]` broadcast over the spatial axes.
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("channel_scale")?;
        if self.shape(s) != [b, c] {
            return Err(shape_mismatch("channel_scale", self.shape(x), self.shape(s)));
        }
        let sv = self.value(s).data().to_vec();
        let mut out = self.value(x).clone();
        for (ch, &sc) in out.data_mut().chunks_mut(h * w).zip(&sv) {
            for v in ch {
                *v = *v * sc;
            }
        }
        let rg = self.rg(&[x, s]);
        Ok(self.push(out, Op::ChannelScale(x, s), rg))
    }

    /// `x[B×C×H×W] * s[H]` broadcast over batch, channel and width.
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4("row_scale")?;
        if self.shape(s) != [h] {
            return Err(shape_mismatch("row_scale", self.shape(x), self.shape(s)));
        }
        let sv = self.value(s).data().to_vec();
        let mut out = self.value(x).clone();
        for (k, row) in out.data_mut().chunks_mut(w).enumerate() {
            let sc = sv[k % h];
            for v in row {
                *v = *v * sc;
            }
        }
        let rg = self.rg(&[x, s]);
        Ok(self.push(out, Op::RowScale(x, s), rg))
    }

    /// Stacks `M` tensors of shape `[B×D]` into a single-channel map
    /// `[B×1×M×D]`, row `m` of each sample taken from `rows[m]`.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::Contract("stack_rows needs at least one row".into()))?;
        let (b, d) = self.value(first).dims2("stack_rows")?;
        for &r in rows {
            if self.shape(r) != [b, d] {
                return Err(shape_mismatch("stack_rows", self.shape(first), self.shape(r)));
            }
        }
        let m = rows.len();
        let mut out = vec![T::zero(); b * m * d];
        for (mi, &r) in rows.iter().enumerate() {
            for (bi, src) in self.value(r).data().chunks(d).enumerate() {
                let start = (bi * m + mi) * d;
                out[start..start + d].copy_from_slice(src);
            }
        }
        let out = Tensor::new([b, 1, m, d], out)?;
        let rg = self.rg(rows);
        Ok(self.push(out, Op::StackRows(rows.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, node)| node.name.clone().map(|name| (name, Var(i))))
            .collect();
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = Tensor::new(va.shape(), zip_map(g.data(), vb.data(), |x, y| x * y))?;
                    self.accumulate(grads, *a, d);
                }
                if self.wants(*b) {
                    let d = Tensor::new(vb.shape(), zip_map(g.data(), va.data(), |x, y| x * y))?;
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, g.map(|v| v * c));
            }
            Op::AddRowBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*bias) {
                    let n = self.value(*bias).len();
                    let mut db = vec![T::zero(); n];
                    for row in g.data().chunks(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d = *d + v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new([n], db)?);
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = va.dims2("matmul")?;
                let (_, n) = vb.dims2("matmul")?;
                if self.wants(*a) {
                    // dA = G · Bᵀ
                    let mut bt = vec![T::zero(); k * n];
                    transpose_into(vb.data(), &mut bt, k, n);
                    let mut da = vec![T::zero(); m * k];
                    matmul_acc(g.data(), &bt, &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::new([m, k], da)?);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · G
                    let mut at = vec![T::zero(); k * m];
                    transpose_into(va.data(), &mut at, m, k);
                    let mut db = vec![T::zero(); k * n];
                    matmul_acc(&at, g.data(), &mut db, k, m, n);
                    self.accumulate(grads, *b, Tensor::new([k, n], db)?);
                }
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, g.transpose()?);
            }
            Op::Relu(a) => {
                let d = zip_map(g.data(), self.value(*a).data(), |gv, x| {
                    if x > T::zero() {
                        gv
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *a, Tensor::new(g.shape(), d)?);
            }
            Op::Sigmoid(a) => {
                let d = zip_map(g.data(), out.data(), |gv, y| gv * y * (T::one() - y));
                self.accumulate(grads, *a, Tensor::new(g.shape(), d)?);
            }
            Op::Softmax(a) => {
                let (_, c) = out.dims2("softmax")?;
                let mut d = vec![T::zero(); out.len()];
                for ((dr, yr), gr) in d.chunks_mut(c).zip(out.data().chunks(c)).zip(g.data().chunks(c)) {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &gv)| y * gv).sum();
                    for ((dv, &y), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *dv = y * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(out.shape(), d)?);
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let up = g.data()[0];
                let (_, c) = probs.dims2("softmax_cross_entropy")?;
                let mut d = probs.clone();
                for (row, &label) in d.data_mut().chunks_mut(c).zip(labels) {
                    row[label] = row[label] - T::one();
                    for v in row.iter_mut() {
                        *v = *v * up;
                    }
                }
                self.accumulate(grads, *logits, d);
            }
            Op::Sum(a) => {
                let up = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), up));
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, g.reshape(self.shape(*a))?);
            }
            Op::Conv2d { x, kernel, stride, pad } => {
                self.conv2d_backward(*x, *kernel, *stride, *pad, g, grads)?;
            }
            Op::SpatialMean(x) => {
                let (_, _, h, w) = self.value(*x).dims4("spatial_mean")?;
                let area = T::of((h * w) as f64);
                let mut d = Vec::with_capacity(self.value(*x).len());
                for &gv in g.data() {
                    d.extend(std::iter::repeat_n(gv / area, h * w));
                }
                self.accumulate(grads, *x, Tensor::new(self.shape(*x), d)?);
            }
            Op::SpatialMax { x, argmax } => {
                let mut d = Tensor::zeros(self.shape(*x));
                for (&idx, &gv) in argmax.iter().zip(g.data()) {
                    d.data_mut()[idx] = gv;
                }
                self.accumulate(grads, *x, d);
            }
            Op::ChannelScale(x, s) => {
                let xv = self.value(*x);
                let (_, _, h, w) = xv.dims4("channel_scale")?;
                let sv = self.value(*s);
                if self.wants(*x) {
                    let mut d = g.clone();
                    for (ch, &sc) in d.data_mut().chunks_mut(h * w).zip(sv.data()) {
                        for v in ch {
                            *v = *v * sc;
                        }
                    }
                    self.accumulate(grads, *x, d);
                }
                if self.wants(*s) {
                    let ds = g
                        .data()
                        .chunks(h * w)
                        .zip(xv.data().chunks(h * w))
                        .map(|(gc, xc)| gc.iter().zip(xc).map(|(&a, &b)| a * b).sum())
                        .collect();
                    self.accumulate(grads, *s, Tensor::new(sv.shape(), ds)?);
                }
            }
            Op::RowScale(x, s) => {
                let xv = self.value(*x);
                let (_, _, h, w) = xv.dims4("row_scale")?;
                let sv = self.value(*s).data();
                if self.wants(*x) {
                    let mut d = g.clone();
                    for (k, row) in d.data_mut().chunks_mut(w).enumerate() {
                        let sc = sv[k % h];
                        for v in row {
                            *v = *v * sc;
                        }
                    }
                    self.accumulate(grads, *x, d);
                }
                if self.wants(*s) {
                    let mut ds = vec![T::zero(); h];
                    for (k, (gr, xr)) in g.data().chunks(w).zip(xv.data().chunks(w)).enumerate() {
                        let dot: T = gr.iter().zip(xr).map(|(&a, &b)| a * b).sum();
                        ds[k % h] = ds[k % h] + dot;
                    }
                    self.accumulate(grads, *s, Tensor::new([h], ds)?);
                }
            }
            Op::StackRows(rows) => {
                let (b, _, m, d) = g.dims4("stack_rows")?;
                for (mi, &r) in rows.iter().enumerate() {
                    if !self.wants(r) {
                        continue;
                    }
                    let mut dr = Vec::with_capacity(b * d);
                    for bi in 0..b {
                        let start = (bi * m + mi) * d;
                        dr.extend_from_slice(&g.data()[start..start + d]);
                    }
                    self.accumulate(grads, r, Tensor::new([b, d], dr)?);
                }
            }
        }
        Ok(())
    }

    fn conv2d_backward(
        &self,
        x: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let xv = self.value(x);
        let kv = self.value(kernel);
        let (b, cin, h, w) = xv.dims4("conv2d")?;
        let (cout, _, kh, kw) = kv.dims4("conv2d")?;
        let (_, _, ho, wo) = g.dims4("conv2d")?;
        let want_x = self.wants(x);
        let want_k = self.wants(kernel);
        let mut dx = vec![T::zero(); if want_x { xv.len() } else { 0 }];
        let mut dk = vec![T::zero(); if want_k { kv.len() } else { 0 }];
        let (xd, kd, gd) = (xv.data(), kv.data(), g.data());
        for bi in 0..b {
            for o in 0..cout {
                for i in 0..ho {
                    for j in 0..wo {
                        let gv = gd[((bi * cout + o) * ho + i) * wo + j];
                        if gv == T::zero() {
                            continue;
                        }
                        for c in 0..cin {
                            for u in 0..kh {
                                let Some(r) = (i * stride + u).checked_sub(pad).filter(|&r| r < h) else {
                                    continue;
                                };
                                for v in 0..kw {
                                    let Some(col) = (j * stride + v).checked_sub(pad).filter(|&q| q < w) else {
                                        continue;
                                    };
                                    let xi = ((bi * cin + c) * h + r) * w + col;
                                    let ki = ((o * cin + c) * kh + u) * kw + v;
                                    if want_x {
                                        dx[xi] = dx[xi] + gv * kd[ki];
                                    }
                                    if want_k {
                                        dk[ki] = dk[ki] + gv * xd[xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if want_x {
            self.accumulate(grads, x, Tensor::new(xv.shape(), dx)?);
        }
        if want_k {
            self.accumulate(grads, kernel, Tensor::new(kv.shape(), dk)?);
        }
        Ok(())
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
