//! Full-reference quality metrics and per-image reports.
//!
//! Images are `[H, W]`, `[C, H, W]` or `[1, C, H, W]` tensors with one or
//! three channels. SSIM and FSIM work on luma; PSNR uses every sample.

mod fsim;
mod report;
mod ssim;

pub use fsim::{fsim, fsim_maps, phase_congruency, FsimMaps, FSIM_MIN_SIZE};
pub use report::{aggregate, MetricReport, MetricRow, DEFAULT_PSNR_CAP};
pub use ssim::{gaussian_window, ssim, SSIM_SIGMA, SSIM_WINDOW};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Single-channel image in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if h * w != data.len() || h == 0 || w == 0 {
            return Err(Error::dim(format!("{h}x{w} plane with {} samples", data.len())));
        }
        Ok(Plane { h, w, data })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn into_tensor(self) -> Tensor {
        Tensor::new(&[self.h, self.w], self.data).expect("plane shape is valid")
    }
}

/// `(channels, h, w)` of an image tensor.
pub fn image_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    let (c, h, w) = match *x.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        [1, c, h, w] => (c, h, w),
        ref s => return Err(Error::dim(format!("expected a single image, got shape {s:?}"))),
    };
    if c != 1 && c != 3 {
        return Err(Error::dim(format!("expected 1 or 3 channels, got {c}")));
    }
    Ok((c, h, w))
}

/// Luma plane (0.299 R + 0.587 G + 0.114 B), or the single channel as is.
pub fn luma(x: &Tensor) -> Result<Plane> {
    let (c, h, w) = image_dims(x)?;
    let d = x.data();
    let n = h * w;
    let data = if c == 1 {
        d.to_vec()
    } else {
        (0..n)
            .map(|i| LUMA[0] * d[i] + LUMA[1] * d[n + i] + LUMA[2] * d[2 * n + i])
            .collect()
    };
    Plane::new(h, w, data)
}

fn same_image_shape(x: &Tensor, y: &Tensor) -> Result<()> {
    let a = image_dims(x)?;
    let b = image_dims(y)?;
    if a != b {
        return Err(Error::dim(format!("image shapes differ: {:?} vs {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

/// Mean squared error over all samples.
pub fn mse(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::dim(format!("shapes differ: {:?} vs {:?}", x.shape(), y.shape())));
    }
    let s: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / x.numel() as f64)
}

/// `10·log10(max_val² / MSE)`; `+∞` for identical inputs.
pub fn psnr(x: &Tensor, y: &Tensor, max_val: f64) -> Result<f64> {
    if !(max_val > 0.0) {
        return Err(Error::Domain(format!("max_val must be positive, got {max_val}")));
    }
    let m = mse(x, y)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / m).log10())
}
