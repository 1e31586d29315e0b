//! Forward kernels on plain tensors.
//!
//! The tape in [`super::graph`] calls into these for its forward values, and
//! inference code can use them directly without recording anything.

use crate::error::{Error, Result};

use super::tensor::{gemm, Tensor};

/// Default elu slope for negative inputs.
pub const ELU_ALPHA: f64 = 1.0;

/// Denominator floor for normalized linear attention.
pub const LINEAR_ATTENTION_MIN_DENOM: f64 = 1e-12;

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn elu_scalar(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

/// Positive feature map used by linear attention: `elu(x) + 1`.
pub fn feature_map(x: f64) -> f64 {
    elu_scalar(x, ELU_ALPHA) + 1.0
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn elu(x: &Tensor, alpha: f64) -> Tensor {
    x.map(|v| elu_scalar(v, alpha))
}

/// PReLU with one slope per column.
pub fn prelu(x: &Tensor, slope: &Tensor) -> Result<Tensor> {
    let cols = x.cols();
    if slope.len() != cols {
        return Err(Error::shape(format!(
            "prelu: {} slopes for {cols} channels",
            slope.len()
        )));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(cols) {
        for (v, &a) in row.iter_mut().zip(slope.data()) {
            if *v <= 0.0 {
                *v *= a;
            }
        }
    }
    Ok(out)
}

pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    for row in out.data_mut().chunks_mut(cols) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Per-row normalization to zero mean and unit variance, then `gain * x + bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let cols = x.cols();
    if cols < 2 {
        return Err(Error::shape("layer_norm needs rows of length >= 2"));
    }
    if gain.len() != cols || bias.len() != cols {
        return Err(Error::shape(format!(
            "layer_norm: gain/bias of length {}/{} for rows of {cols}",
            gain.len(),
            bias.len()
        )));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let (mean, inv_std) = row_moments(row, eps);
        for ((v, &g), &b) in row.iter_mut().zip(gain.data()).zip(bias.data()) {
            *v = (*v - mean) * inv_std * g + b;
        }
    }
    Ok(out)
}

pub(crate) fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Normalizes each contiguous group of `group` columns to unit l2 norm.
///
/// Zero groups stay zero; their `(row, group)` indices are returned.
pub fn l2_normalize_groups(x: &Tensor, group: usize) -> Result<(Tensor, Vec<(usize, usize)>)> {
    let cols = x.cols();
    if group == 0 || cols % group != 0 {
        return Err(Error::shape(format!(
            "l2 normalize: group {group} does not divide {cols}"
        )));
    }
    let mut out = x.clone();
    let mut zero = Vec::new();
    for (r, row) in out.data_mut().chunks_mut(cols).enumerate() {
        for (g, chunk) in row.chunks_mut(group).enumerate() {
            let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                zero.push((r, g));
            } else {
                chunk.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    Ok((out, zero))
}

pub fn l2_normalize_rows(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (t, zero) = l2_normalize_groups(x, x.cols()).expect("row group always divides");
    (t, zero.into_iter().map(|(r, _)| r).collect())
}

/// Offset of kernel tap `k` relative to the output frame for "same" padding.
pub(crate) fn tap_offset(k: usize, kernel: usize, dilation: usize) -> isize {
    (k as isize - (kernel as isize - 1) / 2) * dilation as isize
}

/// Overlapping output row range `[lo, hi)` for a tap with the given offset.
pub(crate) fn tap_rows(frames: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (frames as isize - offset.max(0)).max(0) as usize;
    (lo.min(frames), hi.max(lo.min(frames)))
}

pub(crate) fn check_kernel(kernel: usize, dilation: usize) -> Result<()> {
    if kernel % 2 == 0 {
        return Err(Error::config(format!(
            "convolution kernel size must be odd, got {kernel}"
        )));
    }
    if dilation == 0 {
        return Err(Error::config("dilation must be >= 1"));
    }
    Ok(())
}

/// Dilated 1-D convolution over time with same-length zero padding.
///
/// `x` is `T×Cin`, `kernel` is `K×Cin×Cout`; output is `T×Cout`.
pub fn conv1d_dilated(x: &Tensor, kernel: &Tensor, dilation: usize) -> Result<Tensor> {
    let (frames, cin) = x.expect_matrix("conv1d input")?;
    let ks = kernel.shape();
    if ks.len() != 3 || ks[1] != cin {
        return Err(Error::shape(format!(
            "conv1d kernel {ks:?} does not match {cin} input channels"
        )));
    }
    let (k_size, cout) = (ks[0], ks[2]);
    check_kernel(k_size, dilation)?;
    let mut out = vec![0.0; frames * cout];
    for k in 0..k_size {
        let off = tap_offset(k, k_size, dilation);
        let (lo, hi) = tap_rows(frames, off);
        if hi <= lo {
            continue;
        }
        let src = (lo as isize + off) as usize;
        let w = &kernel.data()[k * cin * cout..(k + 1) * cin * cout];
        gemm(
            hi - lo,
            cin,
            cout,
            1.0,
            &x.data()[src * cin..],
            false,
            w,
            false,
            1.0,
            &mut out[lo * cout..],
        );
    }
    Tensor::matrix(frames, cout, out)
}

/// Per-channel dilated convolution; `kernel` is `K×C`.
pub fn depthwise_conv1d(x: &Tensor, kernel: &Tensor, dilation: usize) -> Result<Tensor> {
    let (frames, ch) = x.expect_matrix("depthwise input")?;
    let ks = kernel.shape();
    if ks.len() != 2 || ks[1] != ch {
        return Err(Error::shape(format!(
            "depthwise kernel {ks:?} does not match {ch} channels"
        )));
    }
    let k_size = ks[0];
    check_kernel(k_size, dilation)?;
    let mut out = vec![0.0; frames * ch];
    for k in 0..k_size {
        let off = tap_offset(k, k_size, dilation);
        let (lo, hi) = tap_rows(frames, off);
        let w = kernel.row(k);
        for t in lo..hi {
            let src = (t as isize + off) as usize;
            let xr = &x.data()[src * ch..(src + 1) * ch];
            let or = &mut out[t * ch..(t + 1) * ch];
            for ((o, &xv), &wv) in or.iter_mut().zip(xr).zip(w) {
                *o += xv * wv;
            }
        }
    }
    Tensor::matrix(frames, ch, out)
}

fn check_qkv(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(usize, usize, usize)> {
    let (tq, dq) = q.expect_matrix("query")?;
    let (tk, dk) = k.expect_matrix("key")?;
    let (tv, dv) = v.expect_matrix("value")?;
    if dq != dk || tk != tv {
        return Err(Error::shape(format!(
            "attention shapes q {tq}x{dq}, k {tk}x{dk}, v {tv}x{dv}"
        )));
    }
    Ok((tq, tk, dv))
}

/// Softmax attention. Returns the output and the `Tq×Tk` attention matrix.
pub fn attention_full(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let (tq, tk, dv) = check_qkv(q, k, v)?;
    let dh = q.cols();
    let mut weights = vec![0.0; tq * tk];
    gemm(
        tq,
        dh,
        tk,
        1.0 / (dh as f64).sqrt(),
        q.data(),
        false,
        k.data(),
        true,
        0.0,
        &mut weights,
    );
    for row in weights.chunks_mut(tk) {
        softmax_in_place(row);
    }
    let mut out = vec![0.0; tq * dv];
    gemm(tq, tk, dv, 1.0, &weights, false, v.data(), false, 0.0, &mut out);
    Ok((Tensor::matrix(tq, dv, out)?, Tensor::matrix(tq, tk, weights)?))
}

/// Normalized linear attention with the `elu + 1` feature map.
///
/// Keys and values are folded into a `Dh×Dv` summary and a `Dh` normalizer,
/// so nothing of size `Tq×Tk` is ever formed.
pub fn attention_linear(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (tq, tk, dv) = check_qkv(q, k, v)?;
    let dh = q.cols();
    let phi_k: Vec<f64> = k.data().iter().map(|&x| feature_map(x)).collect();
    let mut summary = vec![0.0; dh * dv];
    gemm(dh, tk, dv, 1.0, &phi_k, true, v.data(), false, 0.0, &mut summary);
    let mut norm = vec![0.0; dh];
    for row in phi_k.chunks(dh.max(1)) {
        for (n, &p) in norm.iter_mut().zip(row) {
            *n += p;
        }
    }
    drop(phi_k);
    let phi_q: Vec<f64> = q.data().iter().map(|&x| feature_map(x)).collect();
    let mut out = vec![0.0; tq * dv];
    gemm(tq, dh, dv, 1.0, &phi_q, false, &summary, false, 0.0, &mut out);
    for (row, dst) in phi_q.chunks(dh.max(1)).zip(out.chunks_mut(dv.max(1))) {
        let denom = row
            .iter()
            .zip(&norm)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .max(LINEAR_ATTENTION_MIN_DENOM);
        dst.iter_mut().for_each(|o| *o /= denom);
    }
    Tensor::matrix(tq, dv, out)
}
