//! Right-angle geometry and resizing for `[N, C, H, W]` tensors.

use rand::Rng;

use super::HazePair;
use crate::error::{Error, Result};
use crate::scattering::{DepthMap, TransmissionMap};
use crate::tensor::Tensor;

pub const TRAIN_SIZE: usize = 16;

/// Mirror along the width axis.
pub fn hflip(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let d = x.data();
    Tensor::from_fn(&[n, c, h, w], |i| {
        let (row, col) = (i / w, i % w);
        d[row * w + (w - 1 - col)]
    })
}

/// Counter-clockwise quarter turns; `[N, C, H, W]` becomes `[N, C, W, H]`
/// for odd `k`.
pub fn rot90(x: &Tensor, k: usize) -> Result<Tensor> {
    let mut out = x.clone();
    for _ in 0..k % 4 {
        let (n, c, h, w) = out.dims4()?;
        let d = out.data();
        // out'[i][j] = out[j][w − 1 − i], new shape (w, h)
        out = Tensor::from_fn(&[n, c, w, h], |idx| {
            let plane = idx / (w * h);
            let (i, j) = ((idx % (w * h)) / h, idx % h);
            d[plane * h * w + j * w + (w - 1 - i)]
        })?;
    }
    Ok(out)
}

/// `size × size` window with top-left corner `(y, x)`.
pub fn crop(x: &Tensor, y: usize, x0: usize, size: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if y + size > h || x0 + size > w {
        return Err(Error::dim(format!("crop {size}x{size} at ({y}, {x0}) exceeds {h}x{w}")));
    }
    let d = x.data();
    Tensor::from_fn(&[n, c, size, size], |i| {
        let plane = i / (size * size);
        let (r, col) = ((i % (size * size)) / size, i % size);
        d[plane * h * w + (y + r) * w + x0 + col]
    })
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if oh == 0 || ow == 0 {
        return Err(Error::dim("resize target must be non-empty"));
    }
    if (oh, ow) == (h, w) {
        return Ok(x.clone());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let s = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let p = ((o as f64 + 0.5) * s - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = p.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, p - i0 as f64)
            })
            .collect()
    };
    let ys = axis(oh, h);
    let xs = axis(ow, w);
    let d = x.data();
    Tensor::from_fn(&[n, c, oh, ow], |i| {
        let plane = i / (oh * ow);
        let (yi, xi) = ((i % (oh * ow)) / ow, i % ow);
        let (y0, y1, fy) = ys[yi];
        let (x0, x1, fx) = xs[xi];
        let base = plane * h * w;
        let top = d[base + y0 * w + x0] * (1.0 - fx) + d[base + y0 * w + x1] * fx;
        let bot = d[base + y1 * w + x0] * (1.0 - fx) + d[base + y1 * w + x1] * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Bilinear resize to the 16×16 training size.
pub fn resize_to_train(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h < TRAIN_SIZE || w < TRAIN_SIZE {
        return Err(Error::dim(format!("cannot shrink {h}x{w} to {TRAIN_SIZE}x{TRAIN_SIZE}")));
    }
    resize_bilinear(x, TRAIN_SIZE, TRAIN_SIZE)
}

/// One draw of the training-time geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    /// Top-left corner of the crop, if the image is larger than the crop.
    pub crop: Option<(usize, usize)>,
    pub crop_size: usize,
    pub flip: bool,
    pub quarter_turns: usize,
}

impl Augmentation {
    pub fn identity(size: usize) -> Self {
        Augmentation {
            crop: None,
            crop_size: size,
            flip: false,
            quarter_turns: 0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(h: usize, w: usize, crop_size: usize, rng: &mut R) -> Result<Self> {
        if h < crop_size || w < crop_size {
            return Err(Error::dim(format!("{h}x{w} image is smaller than the {crop_size}x{crop_size} crop")));
        }
        let crop = if h > crop_size || w > crop_size {
            Some((rng.random_range(0..=h - crop_size), rng.random_range(0..=w - crop_size)))
        } else {
            None
        };
        Ok(Augmentation {
            crop,
            crop_size,
            flip: rng.random_bool(0.5),
            quarter_turns: rng.random_range(0..4),
        })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = match self.crop {
            Some((y, x0)) => crop(x, y, x0, self.crop_size)?,
            None => x.clone(),
        };
        if self.flip {
            out = hflip(&out)?;
        }
        rot90(&out, self.quarter_turns)
    }

    /// Same transform on every field; haze parameters are unchanged.
    pub fn apply_pair(&self, pair: &HazePair) -> Result<HazePair> {
        Ok(HazePair {
            clear: self.apply(&pair.clear)?,
            hazy: self.apply(&pair.hazy)?,
            depth: DepthMap::new(self.apply(pair.depth.tensor())?)?,
            transmission: TransmissionMap::new(self.apply(pair.transmission.tensor())?, pair.transmission.t_min())?,
            params: pair.params,
        })
    }
}

/// Random crop to `crop_size` (when larger), horizontal flip, and a random
/// right-angle rotation, applied identically to every map in the pair.
pub fn augment<R: Rng + ?Sized>(pair: &HazePair, crop_size: usize, rng: &mut R) -> Result<HazePair> {
    let (_, _, h, w) = pair.clear.dims4()?;
    Augmentation::sample(h, w, crop_size, rng)?.apply_pair(pair)
}
