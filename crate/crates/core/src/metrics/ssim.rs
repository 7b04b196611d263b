use super::{luma, same_image_shape, Plane};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Valid-mode separable filtering: `(h−k+1) × (w−k+1)` outputs.
fn filter_valid(p: &Plane, taps: &[f64]) -> Plane {
    let k = taps.len();
    let ow = p.w - k + 1;
    let oh = p.h - k + 1;
    let mut rows = vec![0.0; p.h * ow];
    for y in 0..p.h {
        let src = &p.data[y * p.w..(y + 1) * p.w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, t) in taps.iter().enumerate() {
                acc += t * rows[(y + j) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    Plane { h: oh, w: ow, data: out }
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows of the luma
/// planes, with `C1 = (0.01·max)²`, `C2 = (0.03·max)²`, `C3 = C2/2`.
pub fn ssim(x: &Tensor, y: &Tensor, max_val: f64) -> Result<f64> {
    same_image_shape(x, y)?;
    if !(max_val > 0.0) {
        return Err(Error::Domain(format!("max_val must be positive, got {max_val}")));
    }
    let a = luma(x)?;
    let b = luma(y)?;
    if a.h < SSIM_WINDOW || a.w < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {}x{}",
            a.h, a.w
        )));
    }
    let c1 = (0.01 * max_val).powi(2);
    let c2 = (0.03 * max_val).powi(2);
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |f: fn(f64, f64) -> f64| Plane {
        h: a.h,
        w: a.w,
        data: a.data.iter().zip(&b.data).map(|(&u, &v)| f(u, v)).collect(),
    };
    let mu_x = filter_valid(&a, &taps);
    let mu_y = filter_valid(&b, &taps);
    let xx = filter_valid(&prod(|u, _| u * u), &taps);
    let yy = filter_valid(&prod(|_, v| v * v), &taps);
    let xy = filter_valid(&prod(|u, v| u * v), &taps);
    let mut total = 0.0;
    for i in 0..mu_x.data.len() {
        let (mx, my) = (mu_x.data[i], mu_y.data[i]);
        let vx = xx.data[i] - mx * mx;
        let vy = yy.data[i] - my * my;
        let cov = xy.data[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (vx + vy + c2);
        total += num / den;
    }
    Ok(total / mu_x.data.len() as f64)
}
