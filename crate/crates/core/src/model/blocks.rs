//! Parameter initialization and forward passes for the network components.

use rand::Rng;

use crate::error::Result;
use crate::gradcore::{BoundParams, Graph, ParamSet, Tensor, Var};

use super::config::{AttentionKind, ModelConfig};

/// Epsilon for every per-frame layer normalization in the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const PRELU_INIT: f64 = 0.25;

pub(crate) fn init_linear<R: Rng>(
    p: &mut ParamSet,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<()> {
    p.insert_uniform(format!("{name}.w"), &[fan_in, fan_out], fan_in, rng)?;
    p.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]))
}

pub(crate) fn init_layer_norm(p: &mut ParamSet, name: &str, dim: usize) -> Result<()> {
    p.insert(format!("{name}.g"), Tensor::filled(&[dim], 1.0))?;
    p.insert(format!("{name}.b"), Tensor::zeros(&[dim]))
}

pub(crate) fn linear(g: &mut Graph, bp: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let w = bp.var(&format!("{name}.w"))?;
    let b = bp.var(&format!("{name}.b"))?;
    g.linear(x, w, b)
}

pub(crate) fn layer_norm(g: &mut Graph, bp: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let gain = bp.var(&format!("{name}.g"))?;
    let bias = bp.var(&format!("{name}.b"))?;
    g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
}

/// Dilation of TDCN block `b`.
pub fn block_dilation(cfg: &ModelConfig, b: usize) -> usize {
    1 << (b % cfg.dilation_layers)
}

pub(crate) fn init_tdcn<R: Rng>(
    p: &mut ParamSet,
    name: &str,
    cfg: &ModelConfig,
    input_dim: usize,
    rng: &mut R,
) -> Result<()> {
    let d = cfg.model_dim;
    init_linear(p, &format!("{name}.in"), input_dim, d, rng)?;
    for b in 0..cfg.tdcn_blocks() {
        let n = format!("{name}.block{b}");
        init_linear(p, &format!("{n}.conv1"), d, d, rng)?;
        p.insert(format!("{n}.prelu1"), Tensor::filled(&[d], PRELU_INIT))?;
        init_layer_norm(p, &format!("{n}.ln1"), d)?;
        p.insert_uniform(
            format!("{n}.dw.w"),
            &[cfg.tdcn_kernel, d],
            cfg.tdcn_kernel,
            rng,
        )?;
        p.insert(format!("{n}.dw.b"), Tensor::zeros(&[d]))?;
        p.insert(format!("{n}.prelu2"), Tensor::filled(&[d], PRELU_INIT))?;
        init_layer_norm(p, &format!("{n}.ln2"), d)?;
        init_linear(p, &format!("{n}.conv2"), d, d, rng)?;
    }
    Ok(())
}

/// Input projection followed by residual depthwise-separable dilated blocks.
///
/// Each block is 1×1 conv, PReLU, LN, depthwise dilated conv, PReLU, LN,
/// 1×1 conv, plus the block input. Sequences are zero padded at both ends.
pub fn tdcn_forward(
    g: &mut Graph,
    bp: &BoundParams,
    name: &str,
    cfg: &ModelConfig,
    x: Var,
) -> Result<Var> {
    let mut h = linear(g, bp, &format!("{name}.in"), x)?;
    for b in 0..cfg.tdcn_blocks() {
        let n = format!("{name}.block{b}");
        let mut y = linear(g, bp, &format!("{n}.conv1"), h)?;
        let a1 = bp.var(&format!("{n}.prelu1"))?;
        y = g.prelu(y, a1)?;
        y = layer_norm(g, bp, &format!("{n}.ln1"), y)?;
        let k = bp.var(&format!("{n}.dw.w"))?;
        y = g.depthwise_conv1d(y, k, block_dilation(cfg, b))?;
        let kb = bp.var(&format!("{n}.dw.b"))?;
        y = g.add_bias(y, kb)?;
        let a2 = bp.var(&format!("{n}.prelu2"))?;
        y = g.prelu(y, a2)?;
        y = layer_norm(g, bp, &format!("{n}.ln2"), y)?;
        y = linear(g, bp, &format!("{n}.conv2"), y)?;
        h = g.add(h, y)?;
    }
    Ok(h)
}

pub(crate) fn init_sa_block<R: Rng>(
    p: &mut ParamSet,
    name: &str,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<()> {
    let d = cfg.model_dim;
    let f = d * cfg.ffn_expansion;
    for proj in ["q", "k", "v", "o"] {
        init_linear(p, &format!("{name}.{proj}"), d, d, rng)?;
    }
    init_layer_norm(p, &format!("{name}.ln1"), d)?;
    init_linear(p, &format!("{name}.ff1"), d, f, rng)?;
    init_linear(p, &format!("{name}.ff2"), f, d, rng)?;
    init_layer_norm(p, &format!("{name}.ln2"), d)
}

/// Multi-head attention over all frames, no positional encoding.
pub fn multi_head_attention(
    g: &mut Graph,
    bp: &BoundParams,
    name: &str,
    cfg: &ModelConfig,
    x: Var,
) -> Result<Var> {
    let q = linear(g, bp, &format!("{name}.q"), x)?;
    let k = linear(g, bp, &format!("{name}.k"), x)?;
    let v = linear(g, bp, &format!("{name}.v"), x)?;
    let dh = cfg.head_dim();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        heads.push(match cfg.attention {
            AttentionKind::Full => g.attention_full(qh, kh, vh)?,
            AttentionKind::Linear => g.attention_linear(qh, kh, vh)?,
        });
    }
    let cat = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    linear(g, bp, &format!("{name}.o"), cat)
}

/// Post-norm transformer encoder block: `LN(x + MHA(x))`, then
/// `LN(y + FFN(y))` with a ReLU feed-forward layer.
pub fn sa_block(
    g: &mut Graph,
    bp: &BoundParams,
    name: &str,
    cfg: &ModelConfig,
    x: Var,
) -> Result<Var> {
    let a = multi_head_attention(g, bp, name, cfg, x)?;
    let y = g.add(x, a)?;
    let y = layer_norm(g, bp, &format!("{name}.ln1"), y)?;
    let f = linear(g, bp, &format!("{name}.ff1"), y)?;
    let f = g.relu(f);
    let f = linear(g, bp, &format!("{name}.ff2"), f)?;
    let z = g.add(y, f)?;
    layer_norm(g, bp, &format!("{name}.ln2"), z)
}

/// Sigmoid projection to per-slot activity, `T×S`.
pub fn diarization_head(g: &mut Graph, bp: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let logits = linear(g, bp, name, x)?;
    Ok(g.sigmoid(logits))
}
