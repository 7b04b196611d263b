//! Full-size inference by overlapping tiles, and test-set evaluation.

use crate::dataset::HazePair;
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, MetricRow, DEFAULT_PSNR_CAP};
use crate::model::{dehaze, ModelConfig, ModelParams};
use crate::scattering::{ratio_image, recompose, residual_target};
use crate::tensor::Tensor;

pub const DEFAULT_OVERLAP: usize = 4;
const TILE_BATCH: usize = 32;

/// Tile origins along one axis: stride `tile − overlap`, last tile flush
/// with the border.
pub fn tile_starts(len: usize, tile: usize, overlap: usize) -> Result<Vec<usize>> {
    if len < tile {
        return Err(Error::dim(format!("image extent {len} is smaller than the {tile}-pixel tile")));
    }
    if overlap >= tile {
        return Err(Error::Config(format!("overlap {overlap} must be smaller than the tile {tile}")));
    }
    let stride = tile - overlap;
    let mut starts = Vec::new();
    let mut s = 0;
    while s + tile < len {
        starts.push(s);
        s += stride;
    }
    starts.push(len - tile);
    Ok(starts)
}

/// Per-axis blend ramp `min(1, (i+1)/(overlap+1), (tile−i)/(overlap+1))`;
/// strictly positive.
pub fn tile_ramp(tile: usize, overlap: usize) -> Vec<f64> {
    let o = (overlap + 1) as f64;
    (0..tile)
        .map(|i| {
            let up = (i + 1) as f64 / o;
            let down = (tile - i) as f64 / o;
            up.min(down).min(1.0)
        })
        .collect()
}

/// Sum over tiles of each tile's normalized weight at every pixel (≡ 1).
pub fn blend_weight_sum(h: usize, w: usize, tile: usize, overlap: usize) -> Result<Tensor> {
    let ys = tile_starts(h, tile, overlap)?;
    let xs = tile_starts(w, tile, overlap)?;
    let ramp = tile_ramp(tile, overlap);
    let mut acc = vec![0.0; h * w];
    for &y0 in &ys {
        for &x0 in &xs {
            for i in 0..tile {
                for j in 0..tile {
                    acc[(y0 + i) * w + x0 + j] += ramp[i] * ramp[j];
                }
            }
        }
    }
    let mut sum = vec![0.0; h * w];
    for &y0 in &ys {
        for &x0 in &xs {
            for i in 0..tile {
                for j in 0..tile {
                    let p = (y0 + i) * w + x0 + j;
                    sum[p] += ramp[i] * ramp[j] / acc[p];
                }
            }
        }
    }
    Tensor::new(&[h, w], sum)
}

/// Dehazes a `[1, 3, H, W]` image with tiles of the model's input size.
/// A single-tile image is passed straight through the model.
pub fn infer_tiled(hazy: &Tensor, params: &ModelParams, cfg: &ModelConfig, overlap: usize) -> Result<Tensor> {
    let (n, c, h, w) = hazy.dims4()?;
    if n != 1 || c != 3 {
        return Err(Error::dim(format!("expected a [1, 3, H, W] image, got {:?}", hazy.shape())));
    }
    let tile = cfg.arch.input_size;
    let ys = tile_starts(h, tile, overlap)?;
    let xs = tile_starts(w, tile, overlap)?;
    if ys.len() == 1 && xs.len() == 1 {
        return dehaze(params, cfg, hazy);
    }
    let origins: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect();
    let ramp = tile_ramp(tile, overlap);
    let mut out = vec![0.0; 3 * h * w];
    let mut acc = vec![0.0; h * w];
    let src = hazy.data();
    for chunk in origins.chunks(TILE_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * 3 * tile * tile);
        for &(y0, x0) in chunk {
            for ch in 0..3 {
                for i in 0..tile {
                    let row = ch * h * w + (y0 + i) * w + x0;
                    data.extend_from_slice(&src[row..row + tile]);
                }
            }
        }
        let batch = Tensor::new(&[chunk.len(), 3, tile, tile], data)?;
        let res = dehaze(params, cfg, &batch)?;
        let r = res.data();
        for (k, &(y0, x0)) in chunk.iter().enumerate() {
            for i in 0..tile {
                for j in 0..tile {
                    let wgt = ramp[i] * ramp[j];
                    let p = (y0 + i) * w + x0 + j;
                    acc[p] += wgt;
                    for ch in 0..3 {
                        out[ch * h * w + p] += wgt * r[((k * 3 + ch) * tile + i) * tile + j];
                    }
                }
            }
        }
    }
    for ch in 0..3 {
        for p in 0..h * w {
            out[ch * h * w + p] /= acc[p];
        }
    }
    Tensor::new(&[1, 3, h, w], out)
}

/// `J = clamp(K − u)` with the exact residual `u = A(1 − t)/t` of the pair.
pub fn oracle_dehaze(pair: &HazePair) -> Result<Tensor> {
    let k = ratio_image(&pair.hazy, &pair.transmission)?;
    let u = residual_target(&pair.transmission, pair.params.airlight)?;
    recompose(&k, &u)
}

/// `R = 0`, `t = 1`: the output is the (clamped) hazy input.
pub fn identity_dehaze(pair: &HazePair) -> Result<Tensor> {
    Ok(pair.hazy.map(|v| v.clamp(0.0, 1.0)))
}

/// Scores `dehaze_fn(pair)` against each pair's clear image.
pub fn evaluate_with<F>(pairs: &[(String, HazePair)], mut dehaze_fn: F) -> Result<MetricReport>
where
    F: FnMut(&HazePair) -> Result<Tensor>,
{
    if pairs.is_empty() {
        return Err(Error::Config("evaluation needs at least one test pair".into()));
    }
    let rows = pairs
        .iter()
        .map(|(id, pair)| {
            let out = dehaze_fn(pair)?;
            MetricRow::compute(id.clone(), &out, &pair.clear)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::new(rows, DEFAULT_PSNR_CAP)
}

/// Model evaluation with tiled inference.
pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, pairs: &[(String, HazePair)]) -> Result<MetricReport> {
    evaluate_with(pairs, |p| infer_tiled(&p.hazy, params, cfg, DEFAULT_OVERLAP))
}
