//! The three core blocks as tape operations.

use std::sync::Arc;

use super::batch::Topology;
use crate::nn::rng::DropoutKey;
use crate::nn::{dropout_mask, AttentionLayout, Mode, NnError, ParamStore, Tape, Tensor, Var};

/// Everything a block needs besides its inputs.
#[derive(Clone, Copy)]
pub struct BlockContext<'a> {
    pub store: &'a ParamStore,
    pub mode: Mode,
    pub key: DropoutKey,
    pub dropout_p: f64,
}

pub fn linear(t: &mut Tape, ctx: &BlockContext, path: &str, x: Var) -> Result<Var, NnError> {
    let w = t.param(ctx.store, &format!("{path}.weight"));
    let b = t.param(ctx.store, &format!("{path}.bias"));
    t.linear(x, w, b)
}

/// `layer2(relu(layer1(x)))`
pub fn mlp2(t: &mut Tape, ctx: &BlockContext, path: &str, x: Var) -> Result<Var, NnError> {
    let h = linear(t, ctx, &format!("{path}.layer1"), x)?;
    let h = t.relu(h);
    linear(t, ctx, &format!("{path}.layer2"), h)
}

pub fn layernorm(t: &mut Tape, ctx: &BlockContext, path: &str, x: Var) -> Result<Var, NnError> {
    let g = t.param(ctx.store, &format!("{path}.gain"));
    let b = t.param(ctx.store, &format!("{path}.bias"));
    t.layernorm(x, g, b)
}

/// Identity in eval mode or when `p = 0`; otherwise an inverted-dropout mask
/// drawn from the stream keyed by `path`.
pub fn dropout(t: &mut Tape, ctx: &BlockContext, path: &str, x: Var) -> Result<Var, NnError> {
    if ctx.mode == Mode::Eval || ctx.dropout_p == 0.0 {
        return Ok(x);
    }
    let n = t.value(x).len();
    let mask = dropout_mask(ctx.dropout_p, n, &mut ctx.key.stream(path))?;
    Ok(t.mul_const(x, mask))
}

/// `LayerNorm(Dropout(y)) + y`
fn norm_skip(t: &mut Tape, ctx: &BlockContext, norm: &str, drop: &str, y: Var) -> Result<Var, NnError> {
    let d = dropout(t, ctx, drop, y)?;
    let n = layernorm(t, ctx, norm, d)?;
    t.add(n, y)
}

/// Message passing with edge features.
///
/// Each directed edge `u→v` feeds `[x_u | x_v | e_uv]` through
/// `message.layer1` and a ReLU; `message.node_out` gives the message summed
/// into `v`, `message.edge_out` the edge update. Node states become
/// `LayerNorm(Dropout(X̄)) + X̄`; edge states become the mean of both directed
/// updates plus `E`.
pub fn mpnn_block(
    t: &mut Tape,
    ctx: &BlockContext,
    prefix: &str,
    x: Var,
    e: Var,
    topo: &Topology,
) -> Result<(Var, Var), NnError> {
    let xs = t.gather(x, topo.src.clone());
    let xd = t.gather(x, topo.dst.clone());
    let ee = t.gather(e, topo.edge_of.clone());
    let input = t.concat(&[xs, xd, ee]);
    let h = linear(t, ctx, &format!("{prefix}.message.layer1"), input)?;
    let h = t.relu(h);
    let msg = linear(t, ctx, &format!("{prefix}.message.node_out"), h)?;
    let upd = linear(t, ctx, &format!("{prefix}.message.edge_out"), h)?;
    let xbar = t.scatter_sum(msg, topo.dst.clone(), topo.nodes);
    let x_out = norm_skip(t, ctx, &format!("{prefix}.norm"), &format!("{prefix}.dropout"), xbar)?;
    let pooled = t.scatter_sum(upd, topo.edge_of.clone(), topo.edges);
    let pooled = t.scale(pooled, 0.5);
    let e_out = t.add(pooled, e)?;
    Ok((x_out, e_out))
}

/// Multi-head attention inside each graph, logits shifted by the shared
/// `bias_table[head, bucket]`.
pub fn biased_attention(
    t: &mut Tape,
    ctx: &BlockContext,
    prefix: &str,
    x: Var,
    layout: &Arc<AttentionLayout>,
) -> Result<Var, NnError> {
    let q = linear(t, ctx, &format!("{prefix}.attention.query"), x)?;
    // A key bias shifts every logit of a row equally, so keys carry none.
    let kw = t.param(ctx.store, &format!("{prefix}.attention.key.weight"));
    let width = t.value(kw).cols();
    let zero = t.constant(Tensor::zeros(&[width]));
    let k = t.linear(x, kw, zero)?;
    let v = linear(t, ctx, &format!("{prefix}.attention.value"), x)?;
    let bias = t.param(ctx.store, "bias_table");
    t.attention(q, k, v, bias, layout.clone())
}

/// `Y = ffn(x + z)`, then `LayerNorm(Dropout(Y)) + Y`.
fn ffn(t: &mut Tape, ctx: &BlockContext, prefix: &str, x: Var, z: Var) -> Result<Var, NnError> {
    let s = t.add(x, z)?;
    let y = mlp2(t, ctx, &format!("{prefix}.ffn"), s)?;
    norm_skip(t, ctx, &format!("{prefix}.ffn_norm"), &format!("{prefix}.ffn_dropout"), y)
}

/// Message passing followed by biased attention over its output.
pub fn gps_block(
    t: &mut Tape,
    ctx: &BlockContext,
    prefix: &str,
    x: Var,
    e: Var,
    topo: &Topology,
    layout: &Arc<AttentionLayout>,
) -> Result<(Var, Var), NnError> {
    let (xm, e_out) = mpnn_block(t, ctx, prefix, x, e, topo)?;
    let z = biased_attention(t, ctx, prefix, xm, layout)?;
    Ok((ffn(t, ctx, prefix, xm, z)?, e_out))
}

/// The attention half of [`gps_block`] alone; edges play no part.
pub fn transformer_block(
    t: &mut Tape,
    ctx: &BlockContext,
    prefix: &str,
    x: Var,
    layout: &Arc<AttentionLayout>,
) -> Result<Var, NnError> {
    let z = biased_attention(t, ctx, prefix, x, layout)?;
    ffn(t, ctx, prefix, x, z)
}
