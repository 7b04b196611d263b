//! Feature similarity: phase congruency from a log-Gabor filter bank and
//! Scharr gradient magnitude, combined per pixel and pooled with the
//! maximum phase congruency as weight.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{luma, same_image_shape, Plane};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FSIM_MIN_SIZE: usize = 32;

const N_SCALE: usize = 4;
const N_ORIENT: usize = 4;
const MIN_WAVELENGTH: f64 = 6.0;
const MULT: f64 = 2.0;
const SIGMA_ON_F: f64 = 0.55;
const D_THETA_ON_SIGMA: f64 = 1.2;
const NOISE_K: f64 = 2.0;
const EPSILON: f64 = 1e-4;
const LOWPASS_CUTOFF: f64 = 0.45;
const LOWPASS_ORDER: i32 = 15;
/// Stabilizers for the `[0, 255]` range; inputs in `[0, 1]` are rescaled.
const T1: f64 = 0.85;
const T2: f64 = 160.0;

/// Per-pixel maps behind one FSIM value.
#[derive(Clone, Debug)]
pub struct FsimMaps {
    pub pc_x: Tensor,
    pub pc_y: Tensor,
    /// `max(PC_x, PC_y)`, the pooling weight.
    pub pc_m: Tensor,
    /// `S_PC · S_G`.
    pub s_l: Tensor,
}

struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    row_inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    col_inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    fn run(&self, buf: &mut [Complex<f64>], inverse: bool) {
        let (r, c) = (self.rows, self.cols);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for chunk in buf.chunks_mut(c) {
            row.process(chunk);
        }
        let mut column = vec![Complex::new(0.0, 0.0); r];
        for x in 0..c {
            for y in 0..r {
                column[y] = buf[y * c + x];
            }
            col.process(&mut column);
            for y in 0..r {
                buf[y * c + x] = column[y];
            }
        }
        if inverse {
            let s = 1.0 / (r * c) as f64;
            for v in buf.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// Frequency coordinates in `[-0.5, 0.5)` already rotated so that index 0 is DC.
fn freq_axis(n: usize) -> Vec<f64> {
    let centered: Vec<f64> = if n % 2 == 1 {
        let h = (n - 1) as f64 / 2.0;
        (0..n).map(|i| (i as f64 - h) / (n - 1) as f64).collect()
    } else {
        (0..n).map(|i| (i as f64 - (n / 2) as f64) / n as f64).collect()
    };
    (0..n).map(|i| centered[(i + n / 2) % n]).collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Phase congruency of a plane (noise-compensated, summed over orientations).
/// Pixels with no filter response get 0.
pub fn phase_congruency(p: &Plane) -> Plane {
    let (rows, cols) = (p.h, p.w);
    let n = rows * cols;
    let fft = Fft2::new(rows, cols);
    let mut image_fft: Vec<Complex<f64>> = p.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.run(&mut image_fft, false);

    let xs = freq_axis(cols);
    let ys = freq_axis(rows);
    let mut radius = vec![0.0; n];
    let mut sin_t = vec![0.0; n];
    let mut cos_t = vec![0.0; n];
    let mut lowpass = vec![0.0; n];
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (xs[c], ys[r]);
            let rad = (x * x + y * y).sqrt();
            let theta = (-y).atan2(x);
            let i = r * cols + c;
            lowpass[i] = 1.0 / (1.0 + (rad / LOWPASS_CUTOFF).powi(2 * LOWPASS_ORDER));
            radius[i] = rad;
            sin_t[i] = theta.sin();
            cos_t[i] = theta.cos();
        }
    }
    radius[0] = 1.0;

    let log_sigma2 = 2.0 * SIGMA_ON_F.ln().powi(2);
    let log_gabor: Vec<Vec<f64>> = (0..N_SCALE)
        .map(|s| {
            let fo = 1.0 / (MIN_WAVELENGTH * MULT.powi(s as i32));
            let mut g: Vec<f64> = (0..n)
                .map(|i| (-(radius[i] / fo).ln().powi(2) / log_sigma2).exp() * lowpass[i])
                .collect();
            g[0] = 0.0;
            g
        })
        .collect();

    let theta_sigma = PI / N_ORIENT as f64 / D_THETA_ON_SIGMA;
    let mut energy_all = vec![0.0; n];
    let mut an_all = vec![0.0; n];
    let sqrt_n = (n as f64).sqrt();

    for o in 0..N_ORIENT {
        let angle = o as f64 * PI / N_ORIENT as f64;
        let (sa, ca) = angle.sin_cos();
        let spread: Vec<f64> = (0..n)
            .map(|i| {
                let ds = sin_t[i] * ca - cos_t[i] * sa;
                let dc = cos_t[i] * ca + sin_t[i] * sa;
                let dtheta = ds.atan2(dc).abs();
                (-dtheta * dtheta / (2.0 * theta_sigma * theta_sigma)).exp()
            })
            .collect();

        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        let mut eo: Vec<Vec<Complex<f64>>> = Vec::with_capacity(N_SCALE);
        let mut spatial_filters: Vec<Vec<f64>> = Vec::with_capacity(N_SCALE);
        let mut em_n = 0.0;
        for (s, lg) in log_gabor.iter().enumerate() {
            let filter: Vec<f64> = lg.iter().zip(&spread).map(|(a, b)| a * b).collect();
            if s == 0 {
                em_n = filter.iter().map(|f| f * f).sum();
            }
            let mut spatial: Vec<Complex<f64>> = filter.iter().map(|&f| Complex::new(f, 0.0)).collect();
            fft.run(&mut spatial, true);
            spatial_filters.push(spatial.iter().map(|v| v.re * sqrt_n).collect());

            let mut resp: Vec<Complex<f64>> = image_fft.iter().zip(&filter).map(|(v, f)| v * f).collect();
            fft.run(&mut resp, true);
            for i in 0..n {
                sum_an[i] += resp[i].norm();
                sum_e[i] += resp[i].re;
                sum_o[i] += resp[i].im;
            }
            eo.push(resp);
        }

        let mut energy = vec![0.0; n];
        for i in 0..n {
            let x_energy = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt() + EPSILON;
            let mean_e = sum_e[i] / x_energy;
            let mean_o = sum_o[i] / x_energy;
            for resp in &eo {
                let (e, od) = (resp[i].re, resp[i].im);
                energy[i] += e * mean_e + od * mean_o - (e * mean_o - od * mean_e).abs();
            }
        }

        let mut e2: Vec<f64> = eo[0].iter().map(|v| v.norm_sqr()).collect();
        let mean_e2n = -median(&mut e2) / 0.5f64.ln();
        let noise_power = if em_n > 0.0 { mean_e2n / em_n } else { 0.0 };
        let mut sum_an2 = 0.0;
        let mut sum_aiaj = 0.0;
        for i in 0..n {
            for si in 0..N_SCALE {
                let fi = spatial_filters[si][i];
                sum_an2 += fi * fi;
                for sj in si + 1..N_SCALE {
                    sum_aiaj += fi * spatial_filters[sj][i];
                }
            }
        }
        let noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj;
        let tau = (noise_energy2 / 2.0).max(0.0).sqrt();
        let noise_energy = tau * (PI / 2.0).sqrt();
        let noise_sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
        let threshold = (noise_energy + NOISE_K * noise_sigma) / 1.7;

        for i in 0..n {
            energy_all[i] += (energy[i] - threshold).max(0.0);
            an_all[i] += sum_an[i];
        }
    }

    let data = energy_all
        .iter()
        .zip(&an_all)
        .map(|(&e, &a)| if a > 0.0 { e / a } else { 0.0 })
        .collect();
    Plane { h: rows, w: cols, data }
}

/// `F×F` box average ("same" size, zero padded) followed by `F`-fold decimation.
fn downsample(p: &Plane, f: usize) -> Plane {
    if f == 1 {
        return p.clone();
    }
    let off = f / 2;
    let norm = 1.0 / (f * f) as f64;
    let mut data = Vec::new();
    let (mut oh, mut ow) = (0, 0);
    for y in (0..p.h).step_by(f) {
        oh += 1;
        ow = 0;
        for x in (0..p.w).step_by(f) {
            ow += 1;
            let mut acc = 0.0;
            for j in 0..f {
                for i in 0..f {
                    let yy = (y + off) as isize - j as isize;
                    let xx = (x + off) as isize - i as isize;
                    if yy >= 0 && xx >= 0 && (yy as usize) < p.h && (xx as usize) < p.w {
                        acc += p.at(yy as usize, xx as usize);
                    }
                }
            }
            data.push(acc * norm);
        }
    }
    Plane { h: oh, w: ow, data }
}

/// Scharr gradient magnitude, zero padded, same size.
fn gradient_magnitude(p: &Plane) -> Vec<f64> {
    const K: [[f64; 3]; 3] = [[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]];
    let get = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= p.h as isize || x >= p.w as isize {
            0.0
        } else {
            p.at(y as usize, x as usize)
        }
    };
    let mut out = Vec::with_capacity(p.h * p.w);
    for y in 0..p.h as isize {
        for x in 0..p.w as isize {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..3 {
                for i in 0..3 {
                    let v = get(y + j as isize - 1, x + i as isize - 1);
                    gx += K[j][i] * v;
                    gy += K[i][j] * v;
                }
            }
            out.push((gx * gx + gy * gy).sqrt() / 16.0);
        }
    }
    out
}

/// Intermediate maps for `fsim`. Inputs are expected in `[0, 1]`.
pub fn fsim_maps(x: &Tensor, y: &Tensor) -> Result<FsimMaps> {
    same_image_shape(x, y)?;
    let a = luma(x)?;
    let b = luma(y)?;
    if a.h < FSIM_MIN_SIZE || a.w < FSIM_MIN_SIZE {
        return Err(Error::dim(format!(
            "fsim needs at least {FSIM_MIN_SIZE}x{FSIM_MIN_SIZE} images, got {}x{}",
            a.h, a.w
        )));
    }
    let f = ((a.h.min(a.w) as f64 / 256.0).round() as usize).max(1);
    let scale = |p: Plane| Plane {
        h: p.h,
        w: p.w,
        data: p.data.into_iter().map(|v| v * 255.0).collect(),
    };
    let a = downsample(&scale(a), f);
    let b = downsample(&scale(b), f);

    let pc_a = phase_congruency(&a);
    let pc_b = phase_congruency(&b);
    let g_a = gradient_magnitude(&a);
    let g_b = gradient_magnitude(&b);
    let n = a.h * a.w;
    let mut pc_m = Vec::with_capacity(n);
    let mut s_l = Vec::with_capacity(n);
    for i in 0..n {
        let (p1, p2) = (pc_a.data[i], pc_b.data[i]);
        let s_pc = (2.0 * p1 * p2 + T1) / (p1 * p1 + p2 * p2 + T1);
        let (g1, g2) = (g_a[i], g_b[i]);
        let s_g = (2.0 * g1 * g2 + T2) / (g1 * g1 + g2 * g2 + T2);
        pc_m.push(p1.max(p2));
        s_l.push(s_pc * s_g);
    }
    let shape = [a.h, a.w];
    Ok(FsimMaps {
        pc_x: Tensor::new(&shape, pc_a.data)?,
        pc_y: Tensor::new(&shape, pc_b.data)?,
        pc_m: Tensor::new(&shape, pc_m)?,
        s_l: Tensor::new(&shape, s_l)?,
    })
}

/// `Σ S_L·PC_m / Σ PC_m` over the image. When no pixel has phase
/// congruency (e.g. flat images) the plain mean of `S_L` is returned.
pub fn fsim(x: &Tensor, y: &Tensor) -> Result<f64> {
    let m = fsim_maps(x, y)?;
    let weight: f64 = m.pc_m.data().iter().sum();
    if weight > 0.0 {
        let num: f64 = m.s_l.data().iter().zip(m.pc_m.data()).map(|(s, p)| s * p).sum();
        Ok(num / weight)
    } else {
        Ok(m.s_l.data().iter().sum::<f64>() / m.s_l.numel() as f64)
    }
}
