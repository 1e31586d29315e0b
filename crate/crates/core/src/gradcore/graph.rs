//! Reverse-mode tape over [`Tensor`] values.
//!
//! Every operation appends a node whose inputs precede it, so the node list is
//! already a topological order and `backward` walks it in reverse.

use crate::error::{Error, Result};

use super::ops::{self, feature_map, LINEAR_ATTENTION_MIN_DENOM};
use super::tensor::{gemm, matmul_values, Tensor};

/// Probability clamp used by the fused binary cross-entropy.
pub const PROB_EPS: f64 = 1e-7;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    Elu(Var, f64),
    PRelu(Var, Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    L2Normalize {
        x: Var,
        group: usize,
        norms: Vec<f64>,
    },
    Conv1d {
        x: Var,
        kernel: Var,
        dilation: usize,
    },
    Depthwise {
        x: Var,
        kernel: Var,
        dilation: usize,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    AttentionFull {
        q: Var,
        k: Var,
        v: Var,
        weights: Tensor,
    },
    AttentionLinear {
        q: Var,
        k: Var,
        v: Var,
        phi_q: Tensor,
        phi_k: Tensor,
        summary: Vec<f64>,
        norm: Vec<f64>,
        denom: Vec<f64>,
    },
    Sum(Var),
    BceSum {
        p: Var,
        target: Vec<f64>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Recorded computation for one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.backward_done = false;
        Var(self.nodes.len() - 1)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient after [`Graph::backward`]; zeros for unreachable grad-requiring nodes.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        if !self.backward_done || !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape().to_vec();
        Some(match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul_values(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a length-`N` bias to every row of a `T×N` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let cols = xv.cols();
        if bv.len() != cols {
            return Err(Error::shape(format!(
                "bias of length {} for {cols} columns",
                bv.len()
            )));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    /// `x·W + b`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let h = self.matmul(x, weight)?;
        self.add_bias(h, bias)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        let out = ops::elu(self.value(x), alpha);
        self.push(out, Op::Elu(x, alpha), &[x])
    }

    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let out = ops::prelu(self.value(x), self.value(slope))?;
        Ok(self.push(out, Op::PRelu(x, slope), &[x, slope]))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = ops::softmax_rows(self.value(x));
        self.push(out, Op::SoftmaxRows(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let out = ops::layer_norm(xv, self.value(gain), self.value(bias), eps)?;
        let cols = xv.cols();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(xv.rows());
        for row in xv.data().chunks(cols) {
            let (mean, is) = ops::row_moments(row, eps);
            inv_std.push(is);
            xhat.extend(row.iter().map(|v| (v - mean) * is));
        }
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.push(out, op, &[x, gain, bias]))
    }

    pub fn l2_normalize_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        let (out, _) = ops::l2_normalize_groups(xv, group)?;
        let norms = xv
            .data()
            .chunks(group)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(self.push(out, Op::L2Normalize { x, group, norms }, &[x]))
    }

    pub fn conv1d(&mut self, x: Var, kernel: Var, dilation: usize) -> Result<Var> {
        let out = ops::conv1d_dilated(self.value(x), self.value(kernel), dilation)?;
        let op = Op::Conv1d {
            x,
            kernel,
            dilation,
        };
        Ok(self.push(out, op, &[x, kernel]))
    }

    pub fn depthwise_conv1d(&mut self, x: Var, kernel: Var, dilation: usize) -> Result<Var> {
        let out = ops::depthwise_conv1d(self.value(x), self.value(kernel), dilation)?;
        let op = Op::Depthwise {
            x,
            kernel,
            dilation,
        };
        Ok(self.push(out, op, &[x, kernel]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat_cols: row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(rows, total, out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if start + len > cols {
            return Err(Error::shape(format!(
                "slice {start}..{} of {cols} columns",
                start + len
            )));
        }
        let data = xv
            .data()
            .chunks(cols)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        let value = Tensor::matrix(xv.rows(), len, data)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    pub fn attention_full(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (out, weights) = ops::attention_full(self.value(q), self.value(k), self.value(v))?;
        Ok(self.push(out, Op::AttentionFull { q, k, v, weights }, &[q, k, v]))
    }

    pub fn attention_linear(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let out = ops::attention_linear(self.value(q), self.value(k), self.value(v))?;
        let phi_q = self.value(q).map(feature_map);
        let phi_k = self.value(k).map(feature_map);
        let (dh, dv) = (phi_k.cols(), self.value(v).cols());
        let mut summary = vec![0.0; dh * dv];
        gemm(
            dh,
            phi_k.rows(),
            dv,
            1.0,
            phi_k.data(),
            true,
            self.value(v).data(),
            false,
            0.0,
            &mut summary,
        );
        let mut norm = vec![0.0; dh];
        for row in phi_k.data().chunks(dh) {
            for (n, &p) in norm.iter_mut().zip(row) {
                *n += p;
            }
        }
        let denom = phi_q
            .data()
            .chunks(dh)
            .map(|row| {
                row.iter()
                    .zip(&norm)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    .max(LINEAR_ATTENTION_MIN_DENOM)
            })
            .collect();
        let op = Op::AttentionLinear {
            q,
            k,
            v,
            phi_q,
            phi_k,
            summary,
            norm,
            denom,
        };
        Ok(self.push(out, op, &[q, k, v]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Summed binary cross-entropy of clamped probabilities against targets.
    pub fn bce_sum(&mut self, p: Var, target: &Tensor) -> Result<Var> {
        let pv = self.value(p);
        if pv.shape() != target.shape() {
            return Err(Error::shape(format!(
                "bce: probabilities {:?} vs targets {:?}",
                pv.shape(),
                target.shape()
            )));
        }
        let loss = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| bce_value(p, y))
            .sum();
        let op = Op::BceSum {
            p,
            target: target.data().to_vec(),
        };
        Ok(self.push(Tensor::scalar(loss), op, &[p]))
    }

    /// Summed softmax cross-entropy of each logit row against a class index.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let classes = lv.cols();
        if lv.rows() != targets.len() || targets.iter().any(|&c| c >= classes) {
            return Err(Error::shape(format!(
                "softmax_xent: {} rows of {classes} classes vs {} targets",
                lv.rows(),
                targets.len()
            )));
        }
        let probs = ops::softmax_rows(lv);
        let mut loss = 0.0;
        for (r, &c) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[c];
        }
        let op = Op::SoftmaxXent {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    /// Populates gradients of `loss` for every grad-requiring node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Usage(
                "backward already ran on this graph; record a new forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backward_node(i, &g);
            self.grads[i] = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(delta.to_vec()),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) {
        // Take the op out to release the borrow on self while accumulating.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, g, false, self.value(*b).data(), true, 0.0, &mut da);
                    self.accumulate(*a, &da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, 1.0, self.value(*a).data(), true, g, false, 0.0, &mut db);
                    self.accumulate(*b, &db);
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(*x, g);
                if self.wants(*b) {
                    let cols = self.value(*b).len();
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    self.accumulate(*b, &db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g);
                self.accumulate(*b, g);
            }
            Op::Scale(x, f) => {
                let d: Vec<f64> = g.iter().map(|v| v * f).collect();
                self.accumulate(*x, &d);
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[i].value.data();
                let d: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(*x, &d);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d: Vec<f64> = g
                    .iter()
                    .zip(xv)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(*x, &d);
            }
            Op::Elu(x, alpha) => {
                let xv = self.value(*x).data();
                let y = self.nodes[i].value.data();
                let d: Vec<f64> = g
                    .iter()
                    .zip(xv.iter().zip(y))
                    .map(|(g, (&x, &y))| if x > 0.0 { *g } else { g * (y + alpha) })
                    .collect();
                self.accumulate(*x, &d);
            }
            Op::PRelu(x, slope) => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let sv = self.value(*slope).data();
                let mut dx = vec![0.0; xv.len()];
                let mut ds = vec![0.0; cols];
                for (idx, (&xval, &gv)) in xv.data().iter().zip(g).enumerate() {
                    let c = idx % cols;
                    if xval > 0.0 {
                        dx[idx] = gv;
                    } else {
                        dx[idx] = gv * sv[c];
                        ds[c] += gv * xval;
                    }
                }
                self.accumulate(*x, &dx);
                self.accumulate(*slope, &ds);
            }
            Op::SoftmaxRows(x) => {
                let y = &self.nodes[i].value;
                let cols = y.cols();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(cols).zip(y.data().chunks(cols)).zip(g.chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(*x, &d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).data().to_vec();
                let cols = gv.len();
                let mut dx = vec![0.0; xhat.len()];
                let mut dgain = vec![0.0; cols];
                let mut dbias = vec![0.0; cols];
                for (r, ((dr, xr), gr)) in dx
                    .chunks_mut(cols)
                    .zip(xhat.chunks(cols))
                    .zip(g.chunks(cols))
                    .enumerate()
                {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for c in 0..cols {
                        let dxhat = gr[c] * gv[c];
                        mean_d += dxhat;
                        mean_dx += dxhat * xr[c];
                        dgain[c] += gr[c] * xr[c];
                        dbias[c] += gr[c];
                    }
                    mean_d /= cols as f64;
                    mean_dx /= cols as f64;
                    for c in 0..cols {
                        dr[c] = inv_std[r] * (gr[c] * gv[c] - mean_d - xr[c] * mean_dx);
                    }
                }
                self.accumulate(*x, &dx);
                self.accumulate(*gain, &dgain);
                self.accumulate(*bias, &dbias);
            }
            Op::L2Normalize { x, group, norms } => {
                let y = self.nodes[i].value.data();
                let mut d = vec![0.0; y.len()];
                for (((dc, yc), gc), &n) in d
                    .chunks_mut(*group)
                    .zip(y.chunks(*group))
                    .zip(g.chunks(*group))
                    .zip(norms)
                {
                    if n == 0.0 {
                        continue;
                    }
                    let dot: f64 = yc.iter().zip(gc).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in dc.iter_mut().zip(yc).zip(gc) {
                        *o = (gv - yv * dot) / n;
                    }
                }
                self.accumulate(*x, &d);
            }
            Op::Conv1d {
                x,
                kernel,
                dilation,
            } => {
                let (frames, cin) = (self.value(*x).rows(), self.value(*x).cols());
                let ks = self.value(*kernel).shape().to_vec();
                let (k_size, cout) = (ks[0], ks[2]);
                let mut dx = vec![0.0; frames * cin];
                let mut dk = vec![0.0; k_size * cin * cout];
                for k in 0..k_size {
                    let off = ops::tap_offset(k, k_size, *dilation);
                    let (lo, hi) = ops::tap_rows(frames, off);
                    if hi <= lo {
                        continue;
                    }
                    let src = (lo as isize + off) as usize;
                    let w = &self.value(*kernel).data()[k * cin * cout..(k + 1) * cin * cout];
                    gemm(
                        hi - lo,
                        cout,
                        cin,
                        1.0,
                        &g[lo * cout..],
                        false,
                        w,
                        true,
                        1.0,
                        &mut dx[src * cin..],
                    );
                    gemm(
                        cin,
                        hi - lo,
                        cout,
                        1.0,
                        &self.value(*x).data()[src * cin..],
                        true,
                        &g[lo * cout..],
                        false,
                        1.0,
                        &mut dk[k * cin * cout..],
                    );
                }
                self.accumulate(*x, &dx);
                self.accumulate(*kernel, &dk);
            }
            Op::Depthwise {
                x,
                kernel,
                dilation,
            } => {
                let xv = self.value(*x);
                let (frames, ch) = (xv.rows(), xv.cols());
                let kv = self.value(*kernel);
                let k_size = kv.rows();
                let mut dx = vec![0.0; frames * ch];
                let mut dk = vec![0.0; k_size * ch];
                for k in 0..k_size {
                    let off = ops::tap_offset(k, k_size, *dilation);
                    let (lo, hi) = ops::tap_rows(frames, off);
                    let w = kv.row(k);
                    for t in lo..hi {
                        let src = (t as isize + off) as usize;
                        for c in 0..ch {
                            let gv = g[t * ch + c];
                            dx[src * ch + c] += gv * w[c];
                            dk[k * ch + c] += gv * xv.data()[src * ch + c];
                        }
                    }
                }
                self.accumulate(*x, &dx);
                self.accumulate(*kernel, &dk);
            }
            Op::ConcatCols(parts) => {
                let total = self.nodes[i].value.cols();
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let d: Vec<f64> = g
                            .chunks(total)
                            .flat_map(|r| r[start..start + w].iter().copied())
                            .collect();
                        self.accumulate(p, &d);
                    }
                    start += w;
                }
            }
            Op::SliceCols { x, start } => {
                let cols = self.value(*x).cols();
                let w = self.nodes[i].value.cols();
                let mut d = vec![0.0; self.value(*x).len()];
                for (dr, gr) in d.chunks_mut(cols).zip(g.chunks(w)) {
                    dr[*start..*start + w].copy_from_slice(gr);
                }
                self.accumulate(*x, &d);
            }
            Op::AttentionFull { q, k, v, weights } => {
                let (tq, tk) = (weights.rows(), weights.cols());
                let dh = self.value(*q).cols();
                let dv = self.value(*v).cols();
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dvals = vec![0.0; tk * dv];
                gemm(tk, tq, dv, 1.0, weights.data(), true, g, false, 0.0, &mut dvals);
                let mut dw = vec![0.0; tq * tk];
                gemm(tq, dv, tk, 1.0, g, false, self.value(*v).data(), true, 0.0, &mut dw);
                for (dr, pr) in dw.chunks_mut(tk).zip(weights.data().chunks(tk)) {
                    let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                    for (d, &p) in dr.iter_mut().zip(pr) {
                        *d = p * (*d - dot);
                    }
                }
                let mut dq = vec![0.0; tq * dh];
                gemm(tq, tk, dh, scale, &dw, false, self.value(*k).data(), false, 0.0, &mut dq);
                let mut dk = vec![0.0; tk * dh];
                gemm(tk, tq, dh, scale, &dw, true, self.value(*q).data(), false, 0.0, &mut dk);
                self.accumulate(*q, &dq);
                self.accumulate(*k, &dk);
                self.accumulate(*v, &dvals);
            }
            Op::AttentionLinear {
                q,
                k,
                v,
                phi_q,
                phi_k,
                summary,
                norm,
                denom,
            } => {
                let (tq, dh) = (phi_q.rows(), phi_q.cols());
                let tk = phi_k.rows();
                let dv = self.value(*v).cols();
                let out = &self.nodes[i].value;
                // Upstream split into numerator and denominator paths.
                let mut dnum = vec![0.0; tq * dv];
                let mut dden = vec![0.0; tq];
                for t in 0..tq {
                    let gr = &g[t * dv..(t + 1) * dv];
                    let dot: f64 = gr.iter().zip(out.row(t)).map(|(a, b)| a * b).sum();
                    for (d, &gv) in dnum[t * dv..(t + 1) * dv].iter_mut().zip(gr) {
                        *d = gv / denom[t];
                    }
                    if denom[t] > LINEAR_ATTENTION_MIN_DENOM {
                        dden[t] = -dot / denom[t];
                    }
                }
                let mut dphi_q = vec![0.0; tq * dh];
                gemm(tq, dv, dh, 1.0, &dnum, false, summary, true, 0.0, &mut dphi_q);
                for t in 0..tq {
                    for a in 0..dh {
                        dphi_q[t * dh + a] += dden[t] * norm[a];
                    }
                }
                let mut dsummary = vec![0.0; dh * dv];
                gemm(dh, tq, dv, 1.0, phi_q.data(), true, &dnum, false, 0.0, &mut dsummary);
                let mut dnorm = vec![0.0; dh];
                for t in 0..tq {
                    for a in 0..dh {
                        dnorm[a] += dden[t] * phi_q.at(t, a);
                    }
                }
                let mut dphi_k = vec![0.0; tk * dh];
                gemm(
                    tk,
                    dv,
                    dh,
                    1.0,
                    self.value(*v).data(),
                    false,
                    &dsummary,
                    true,
                    0.0,
                    &mut dphi_k,
                );
                for row in dphi_k.chunks_mut(dh) {
                    row.iter_mut().zip(&dnorm).for_each(|(d, n)| *d += n);
                }
                let mut dvals = vec![0.0; tk * dv];
                gemm(tk, dh, dv, 1.0, phi_k.data(), false, &dsummary, false, 0.0, &mut dvals);
                let feature_grad = |x: f64, phi: f64| if x > 0.0 { 1.0 } else { phi };
                let dq: Vec<f64> = dphi_q
                    .iter()
                    .zip(self.value(*q).data().iter().zip(phi_q.data()))
                    .map(|(d, (&x, &p))| d * feature_grad(x, p))
                    .collect();
                let dk: Vec<f64> = dphi_k
                    .iter()
                    .zip(self.value(*k).data().iter().zip(phi_k.data()))
                    .map(|(d, (&x, &p))| d * feature_grad(x, p))
                    .collect();
                self.accumulate(*q, &dq);
                self.accumulate(*k, &dk);
                self.accumulate(*v, &dvals);
            }
            Op::Sum(x) => {
                let d = vec![g[0]; self.value(*x).len()];
                self.accumulate(*x, &d);
            }
            Op::BceSum { p, target } => {
                let pv = self.value(*p).data();
                let d: Vec<f64> = pv
                    .iter()
                    .zip(target)
                    .map(|(&p, &y)| {
                        if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
                            0.0
                        } else {
                            g[0] * (p - y) / (p * (1.0 - p))
                        }
                    })
                    .collect();
                self.accumulate(*p, &d);
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let cols = probs.cols();
                let mut d: Vec<f64> = probs.data().iter().map(|p| p * g[0]).collect();
                for (r, &c) in targets.iter().enumerate() {
                    d[r * cols + c] -= g[0];
                }
                self.accumulate(*logits, &d);
            }
        }
        self.nodes[i].op = op;
    }
}

/// Binary cross-entropy of one probability with clamping to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn bce_value(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let p = g.param(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap());
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn sigmoid_closed_form() {
        let (w0, x0) = (0.7, -1.3);
        let mut g = Graph::new();
        let w = g.param(Tensor::matrix(1, 1, vec![w0]).unwrap());
        let x = g.constant(Tensor::matrix(1, 1, vec![x0]).unwrap());
        let wx = g.matmul(w, x).unwrap();
        let s = g.sigmoid(wx);
        let loss = g.sum(s);
        g.backward(loss).unwrap();
        let sig = ops::sigmoid_scalar(w0 * x0);
        let expected = sig * (1.0 - sig) * x0;
        assert!((g.grad(w).unwrap().item() - expected).abs() < 1e-15);
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_twice_is_error() {
        let mut g = Graph::new();
        let p = g.param(Tensor::scalar(2.0));
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Usage(_))));
    }

    #[test]
    fn non_scalar_loss_is_error() {
        let mut g = Graph::new();
        let p = g.param(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(p), Err(Error::Usage(_))));
    }

    #[test]
    fn unreachable_param_gets_zero_grad() {
        let mut g = Graph::new();
        let a = g.param(Tensor::filled(&[3], 1.0));
        let b = g.param(Tensor::filled(&[2], 1.0));
        let s = g.sum(a);
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn bce_closed_forms() {
        assert!((bce_value(0.5, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!((bce_value(0.2, 0.0) + 0.8f64.ln()).abs() < 1e-15);
        assert!((bce_value(1.0 - 1e-7, 1.0) - 1e-7).abs() < 1e-12);
        assert!(bce_value(1.0, 1.0) > 0.0);
    }
}
