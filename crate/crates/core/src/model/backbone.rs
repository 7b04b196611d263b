//! Transmission estimator, residual network and the residual loss.

use super::graph::Graph;
use super::ArchConfig;
use crate::error::{Error, Result};
use crate::tensor::{PoolKind, Var};

/// Intermediate variables of the transmission branch.
#[derive(Clone, Copy, Debug)]
pub struct TransmissionTrace {
    /// After the first 3×3 convolution, `[b, 16, S−2, S−2]`.
    pub features: Var,
    /// After slice + elementwise max, `[b, 4, S−2, S−2]`.
    pub maxout: Var,
    /// After 7×7 max pooling and ReLU.
    pub pooled: Var,
    /// Final map in `[t_min, 1]`, `[b, 1, S, S]`.
    pub t: Var,
}

/// Upper branch: conv 3×3 (valid) → slice into groups and take the elementwise
/// max → 7×7 max pool → ReLU → 1×1 conv → clamp `[t_min, 1]` → bilinear
/// resize back to the input size.
pub fn transmission_net_forward(g: &mut Graph, arch: &ArchConfig, hazy: Var) -> Result<TransmissionTrace> {
    let (_, c, h, w) = g.tape.value(hazy).dims4()?;
    if c != 3 {
        return Err(Error::dim(format!("transmission net expects 3 channels, got {c}")));
    }
    let features = g.conv("trans.conv1", hazy, 0, true)?;
    let group = arch.trans_channels / arch.slice_groups;
    let mut maxout = g.tape.slice_channels(features, 0, group)?;
    for k in 1..arch.slice_groups {
        let part = g.tape.slice_channels(features, k * group, group)?;
        maxout = g.tape.maximum(maxout, part)?;
    }
    let pooled = g.tape.pool2d(maxout, PoolKind::Max, 7, 1, 3)?;
    let pooled = g.tape.relu(pooled);
    let proj = g.conv("trans.proj", pooled, 0, true)?;
    let clamped = g.tape.clamp(proj, arch.t_min, 1.0);
    let t = g.tape.upsample_bilinear(clamped, h, w)?;
    Ok(TransmissionTrace {
        features,
        maxout,
        pooled,
        t,
    })
}

/// Lower branch: `residual_depth` blocks of conv 3×3 → BN → ReLU; the last
/// block is a bare conv with three output channels so residuals can be signed.
pub fn residual_net_forward(g: &mut Graph, arch: &ArchConfig, ratio: Var) -> Result<Var> {
    let mut x = ratio;
    for i in 0..arch.residual_depth {
        if i + 1 == arch.residual_depth {
            x = g.conv(&format!("res.conv{i:02}"), x, 1, true)?;
        } else {
            x = g.conv(&format!("res.conv{i:02}"), x, 1, false)?;
            x = g.batch_norm(&format!("res.bn{i:02}"), x)?;
            x = g.tape.relu(x);
        }
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug)]
pub struct BackboneOutput {
    pub t: Var,
    pub ratio: Var,
    pub residual: Var,
}

/// `t = T(I)`, `K = I/t`, `R′ = Res(K)`; gradients flow through the division.
pub fn backbone_forward(g: &mut Graph, arch: &ArchConfig, hazy: Var) -> Result<BackboneOutput> {
    let t = transmission_net_forward(g, arch, hazy)?.t;
    let ratio = g.tape.div(hazy, t)?;
    let residual = residual_net_forward(g, arch, ratio)?;
    Ok(BackboneOutput { t, ratio, residual })
}

/// `(1/2n)·Σᵢ ‖Rᵢ − (Kᵢ − Jᵢ)‖²_F` with `n` the batch size.
pub fn loss_residual(g: &mut Graph, residual: Var, ratio: Var, clear: Var) -> Result<Var> {
    let n = g.tape.shape(residual)[0];
    let target = g.tape.sub(ratio, clear)?;
    if g.tape.shape(target) != g.tape.shape(residual) {
        return Err(Error::dim("residual and target shapes differ"));
    }
    let diff = g.tape.sub(residual, target)?;
    let sq = g.tape.mul(diff, diff)?;
    let total = g.tape.sum(sq);
    Ok(g.tape.scale(total, 1.0 / (2.0 * n as f64)))
}
