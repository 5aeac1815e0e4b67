//! Graph builders for the network's building blocks. Token tensors are laid
//! out `[rows, tokens, width]` where each row is one block of one sample.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    /// `d x heads*head_dim`, as are `wk` and `wv`.
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    /// `heads*head_dim x d`.
    pub wo: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForwardWeights {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct TransformerLayerWeights {
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub attn: AttentionWeights,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
    pub ffn: FeedForwardWeights,
}

#[derive(Clone, Copy, Debug)]
pub struct AggregateWeights {
    pub conv_weight: Var,
    pub conv_bias: Var,
    pub ln_gamma: Var,
    pub ln_beta: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    /// Row-stochastic weights, `[rows*heads, tokens, tokens]`.
    pub attention: Var,
}

fn token_shape(g: &Graph, x: Var, op: &'static str) -> Result<(usize, usize, usize)> {
    match *g.shape(x) {
        [r, n, d] => Ok((r, n, d)),
        ref other => Err(Error::Shape {
            op,
            lhs: other.to_vec(),
            rhs: vec![],
        }),
    }
}

/// `[r, n, heads*hd]` to `[r*heads, n, hd]`.
fn split_heads(g: &mut Graph, x: Var, rows: usize, n: usize, heads: usize, hd: usize) -> Result<Var> {
    let x = g.reshape(x, &[rows, n, heads, hd])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    g.reshape(x, &[rows * heads, n, hd])
}

/// Multi-head scaled dot-product attention inside each row of `x`.
/// Tokens never attend across rows.
pub fn local_msa(g: &mut Graph, x: Var, heads: usize, head_dim: usize, w: &AttentionWeights) -> Result<AttentionOutput> {
    let (rows, n, _) = token_shape(g, x, "local_msa")?;
    if heads == 0 || head_dim == 0 {
        return Err(Error::Config("attention needs at least one head of positive width".into()));
    }
    let q = g.matmul(x, w.wq)?;
    let k = g.matmul(x, w.wk)?;
    let v = g.matmul(x, w.wv)?;
    let inner = heads * head_dim;
    if g.shape(q)[2] != inner {
        return Err(Error::Shape {
            op: "local_msa",
            lhs: g.shape(w.wq).to_vec(),
            rhs: vec![heads, head_dim],
        });
    }
    let q = split_heads(g, q, rows, n, heads, head_dim)?;
    let k = split_heads(g, k, rows, n, heads, head_dim)?;
    let v = split_heads(g, v, rows, n, heads, head_dim)?;
    let scores = g.batch_matmul(q, k, true)?;
    let scores = g.scale(scores, 1.0 / (head_dim as f64).sqrt());
    let attention = g.softmax_rows(scores);
    let ctx = g.batch_matmul(attention, v, false)?;
    let ctx = g.reshape(ctx, &[rows, heads, n, head_dim])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[rows, n, inner])?;
    let output = g.matmul(ctx, w.wo)?;
    Ok(AttentionOutput { output, attention })
}

/// `relu(x W1 + b1) W2 + b2` applied per token.
pub fn feed_forward(g: &mut Graph, x: Var, w: &FeedForwardWeights) -> Result<Var> {
    let h = g.matmul(x, w.w1)?;
    let h = g.add(h, w.b1)?;
    let h = g.relu(h);
    let o = g.matmul(h, w.w2)?;
    g.add(o, w.b2)
}

/// Pre-norm residual layer: `Y' = Y + MSA(LN(Y))`, `Y'' = Y' + FFN(LN(Y'))`.
pub fn transformer_layer(
    g: &mut Graph,
    y: Var,
    heads: usize,
    head_dim: usize,
    w: &TransformerLayerWeights,
    eps: f64,
) -> Result<AttentionOutput> {
    let h = g.layer_norm(y, w.ln1_gamma, w.ln1_beta, eps)?;
    let attn = local_msa(g, h, heads, head_dim, &w.attn)?;
    let y1 = g.add(y, attn.output)?;
    let h = g.layer_norm(y1, w.ln2_gamma, w.ln2_beta, eps)?;
    let f = feed_forward(g, h, &w.ffn)?;
    let output = g.add(y1, f)?;
    Ok(AttentionOutput {
        output,
        attention: attn.attention,
    })
}

/// `[batch*grid², side², d]` block tokens to a `[batch, d, grid*side, grid*side]` map.
pub fn tokens_to_map(g: &mut Graph, tokens: Var, batch: usize, grid: usize, side: usize) -> Result<Var> {
    let (_, _, d) = token_shape(g, tokens, "tokens_to_map")?;
    let x = g.reshape(tokens, &[batch, grid, grid, side, side, d])?;
    let x = g.permute(x, &[0, 5, 1, 3, 2, 4])?;
    g.reshape(x, &[batch, d, grid * side, grid * side])
}

/// Inverse of [`tokens_to_map`].
pub fn map_to_tokens(g: &mut Graph, map: Var, grid: usize, side: usize) -> Result<Var> {
    let (batch, d) = match *g.shape(map) {
        [b, d, h, w] if h == grid * side && w == grid * side => (b, d),
        ref other => {
            return Err(Error::Shape {
                op: "map_to_tokens",
                lhs: other.to_vec(),
                rhs: vec![grid, side],
            })
        }
    };
    let x = g.reshape(map, &[batch, d, grid, side, grid, side])?;
    let x = g.permute(x, &[0, 2, 4, 3, 5, 1])?;
    g.reshape(x, &[batch * grid * grid, side * side, d])
}

/// 3x3 conv (stride 1, pad 1), layer norm over channels at each site, then
/// 3x3 max-pool (stride 2, pad 1). `[b, d, h, w]` to `[b, d', h/2, w/2]`.
pub fn block_aggregate(g: &mut Graph, map: Var, w: &AggregateWeights, eps: f64) -> Result<Var> {
    match *g.shape(map) {
        [_, _, h, w] if h % 2 == 0 && w % 2 == 0 => {}
        [_, _, h, w] => {
            return Err(Error::Geometry(format!("block aggregation needs an even map, got {h}x{w}")));
        }
        ref other => {
            return Err(Error::Shape {
                op: "block_aggregate",
                lhs: other.to_vec(),
                rhs: vec![],
            })
        }
    }
    let x = g.conv2d_3x3(map, w.conv_weight, w.conv_bias, 1, 1)?;
    let x = g.permute(x, &[0, 2, 3, 1])?;
    let x = g.layer_norm(x, w.ln_gamma, w.ln_beta, eps)?;
    let x = g.permute(x, &[0, 3, 1, 2])?;
    g.maxpool2d_3x3(x, 2, 1)
}
