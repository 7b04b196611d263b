//! Attention module: parallel-convolution embedding of the residual image,
//! transformer channel attention with pooled global tokens, CBAM-style
//! spatial attention, and fusion back to a three-channel residual.

use super::graph::Graph;
use super::{EncoderConfig, EMBED_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::{ReduceKind, Tensor, Var};

/// `[R′, conv3×3(R′) (3 ch), conv5×5(R′) (9 ch)]` → 15 channels, same size.
pub fn parallel_conv_embed(g: &mut Graph, residual: Var) -> Result<Var> {
    let c3 = g.conv("att.conv3", residual, 1, true)?;
    let c5 = g.conv("att.conv5", residual, 2, true)?;
    g.tape.concat_channels(&[residual, c3, c5])
}

/// Raw flattened patches `[b, N, m²·C]` and their embeddings plus learnable
/// position embeddings `[b, N, D]`.
pub fn patchify(g: &mut Graph, enc: &EncoderConfig, x: Var) -> Result<(Var, Var)> {
    let raw = g.tape.patches(x, enc.patch_size)?;
    let emb = g.linear("att.embed", raw)?;
    let pos = g.param("att.pos")?;
    let tokens = g.tape.add(emb, pos)?;
    Ok((raw, tokens))
}

/// Global tokens: raw patch vectors averaged over each cell of a `g×g` grid
/// (`g² = count`), then projected with the patch embedding. No position
/// embeddings.
pub fn global_tokens(g: &mut Graph, enc: &EncoderConfig, raw: Var, image_size: usize) -> Result<Var> {
    let pooling = global_pooling_matrix(enc, image_size)?;
    let b = g.tape.shape(raw)[0];
    let (count, n) = (pooling.shape()[0], pooling.shape()[1]);
    let mut data = Vec::with_capacity(b * count * n);
    for _ in 0..b {
        data.extend_from_slice(pooling.data());
    }
    let pool = g.constant(Tensor::new(&[b, count, n], data)?);
    let pooled = g.tape.matmul(pool, raw)?;
    g.linear("att.embed", pooled)
}

/// `[count, N]` averaging matrix from patch tokens to grid cells.
pub fn global_pooling_matrix(enc: &EncoderConfig, image_size: usize) -> Result<Tensor> {
    let count = enc.global_tokens;
    let cells = (count as f64).sqrt().round() as usize;
    let grid = image_size / enc.patch_size;
    if count == 0 || cells * cells != count || !grid.is_multiple_of(cells) {
        return Err(Error::Config(format!(
            "{count} global tokens is not a square grid dividing the {grid}x{grid} patch grid"
        )));
    }
    let span = grid / cells;
    let n = grid * grid;
    let mut m = vec![0.0; count * n];
    let share = 1.0 / (span * span) as f64;
    for py in 0..grid {
        for px in 0..grid {
            let cell = (py / span) * cells + px / span;
            m[cell * n + py * grid + px] = share;
        }
    }
    Tensor::new(&[count, n], m)
}

/// Pre-norm transformer block:
/// `T′ = MHA(LN(T)) + T`, `T_out = MLP(LN(T′)) + T′`.
///
/// With `globals`, keys and values run over `[local; global]` tokens while
/// queries stay local.
pub fn encoder_layer(
    g: &mut Graph,
    enc: &EncoderConfig,
    layer: usize,
    tokens: Var,
    globals: Option<Var>,
) -> Result<Var> {
    let pre = format!("att.enc{layer}");
    let (b, n, d) = match g.tape.shape(tokens) {
        [b, n, d] => (*b, *n, *d),
        s => return Err(Error::dim(format!("tokens must be [b, N, D], got {s:?}"))),
    };
    if d != enc.embed_dim || enc.heads == 0 || d % enc.heads != 0 {
        return Err(Error::Config(format!(
            "embed dim {d} must equal {} and divide into {} heads",
            enc.embed_dim, enc.heads
        )));
    }
    let seq = match globals {
        Some(gt) => g.tape.concat(&[tokens, gt], 1)?,
        None => tokens,
    };
    let m = g.tape.shape(seq)[1];
    let normed = g.layer_norm(&format!("{pre}.ln1"), seq)?;
    let local = if m == n {
        normed
    } else {
        g.tape.slice(normed, 1, 0, n)?
    };
    let q = g.linear(&format!("{pre}.q"), local)?;
    let k = g.linear(&format!("{pre}.k"), normed)?;
    let v = g.linear(&format!("{pre}.v"), normed)?;

    let heads = enc.heads;
    let dh = d / heads;
    let split = |g: &mut Graph, x: Var, len: usize| -> Result<Var> {
        let x = g.tape.reshape(x, &[b, len, heads, dh])?;
        let x = g.tape.permute(x, &[0, 2, 1, 3])?;
        g.tape.reshape(x, &[b * heads, len, dh])
    };
    let qh = split(g, q, n)?;
    let kh = split(g, k, m)?;
    let vh = split(g, v, m)?;
    let kt = g.tape.transpose(kh, 1, 2)?;
    let scores = g.tape.matmul(qh, kt)?;
    let scores = g.tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let probs = g.tape.softmax(scores, 2)?;
    if let Some(log) = g.attention_log.as_mut() {
        log.push(g.tape.value(probs).clone());
    }
    let ctx = g.tape.matmul(probs, vh)?;
    let ctx = g.tape.reshape(ctx, &[b, heads, n, dh])?;
    let ctx = g.tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.tape.reshape(ctx, &[b, n, d])?;
    let attn = g.linear(&format!("{pre}.o"), ctx)?;
    let mid = g.tape.add(tokens, attn)?;

    let normed = g.layer_norm(&format!("{pre}.ln2"), mid)?;
    let hidden = g.linear(&format!("{pre}.fc1"), normed)?;
    let hidden = g.tape.gelu(hidden);
    let out = g.linear(&format!("{pre}.fc2"), hidden)?;
    g.tape.add(mid, out)
}

/// Runs the encoder stack on `x` and returns per-channel weights in (0, 1),
/// shaped `[b, C, 1, 1]`.
pub fn channel_weights(g: &mut Graph, enc: &EncoderConfig, x: Var) -> Result<Var> {
    let (b, c, h, w) = g.tape.value(x).dims4()?;
    if h != w {
        return Err(Error::dim("attention expects square feature maps"));
    }
    let (raw, mut tokens) = patchify(g, enc, x)?;
    let globals = if enc.use_global_tokens {
        Some(global_tokens(g, enc, raw, h)?)
    } else {
        None
    };
    for layer in 0..enc.n_layers {
        tokens = encoder_layer(g, enc, layer, tokens, globals)?;
    }
    let tokens = g.layer_norm("att.ln_f", tokens)?;
    let pooled = g.tape.reduce(tokens, 1, ReduceKind::Mean)?;
    let pooled = g.tape.reshape(pooled, &[b, enc.embed_dim])?;
    let logits = g.linear("att.head", pooled)?;
    let weights = g.tape.sigmoid(logits);
    g.tape.reshape(weights, &[b, c, 1, 1])
}

/// `x` scaled per channel by transformer-derived weights.
pub fn channel_attention(g: &mut Graph, enc: &EncoderConfig, x: Var) -> Result<Var> {
    let w = channel_weights(g, enc, x)?;
    g.tape.mul(x, w)
}

/// Per-pixel weights `[b, 1, H, W]` from channelwise max and mean maps.
pub fn spatial_weights(g: &mut Graph, x: Var) -> Result<Var> {
    let mx = g.tape.reduce(x, 1, ReduceKind::Max)?;
    let mean = g.tape.reduce(x, 1, ReduceKind::Mean)?;
    let stats = g.tape.concat_channels(&[mx, mean])?;
    let logits = g.conv("att.spatial", stats, 3, true)?;
    Ok(g.tape.sigmoid(logits))
}

/// `x` scaled per pixel by the spatial weights.
pub fn spatial_attention(g: &mut Graph, x: Var) -> Result<Var> {
    let s = spatial_weights(g, x)?;
    g.tape.mul(x, s)
}

/// Concatenates the channel- and spatially-attended maps and projects them
/// to the refined three-channel residual. No output activation.
pub fn fuse(g: &mut Graph, channel_out: Var, spatial_out: Var) -> Result<Var> {
    if g.tape.shape(channel_out) != g.tape.shape(spatial_out) {
        return Err(Error::dim("fuse inputs must share a shape"));
    }
    let both = g.tape.concat_channels(&[channel_out, spatial_out])?;
    g.conv("att.fuse", both, 1, true)
}

/// Full attention module from the backbone residual `R′` to refined `R`.
pub fn attention_forward(g: &mut Graph, enc: &EncoderConfig, residual: Var) -> Result<Var> {
    let embedded = parallel_conv_embed(g, residual)?;
    debug_assert_eq!(g.tape.shape(embedded)[1], EMBED_CHANNELS);
    let ch = channel_attention(g, enc, embedded)?;
    let sp = spatial_attention(g, ch)?;
    fuse(g, ch, sp)
}
