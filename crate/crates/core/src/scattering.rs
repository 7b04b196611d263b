//! Atmospheric scattering model.
//!
//! A hazy observation is `I = J·t + A·(1 − t)` with transmission
//! `t = exp(−β·d)`. Dividing by `t` gives the ratio image
//! `K = I/t = J + u` where `u = A·(1 − t)/t`, so a clear image is recovered
//! as `J = K − u`. All images are `[N, 3, H, W]` in `[0, 1]`; transmission
//! and depth are `[N, 1, H, W]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default transmission floor, keeps `K ≤ 20·I`.
pub const DEFAULT_T_MIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HazeParams {
    /// Global atmospheric light A in (0, 1].
    pub airlight: f64,
    /// Scattering coefficient β > 0.
    pub beta: f64,
}

impl HazeParams {
    pub fn new(airlight: f64, beta: f64) -> Result<Self> {
        if !(airlight > 0.0 && airlight <= 1.0) {
            return Err(Error::Domain(format!("airlight {airlight} outside (0, 1]")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("scattering coefficient {beta} must be > 0")));
        }
        Ok(HazeParams { airlight, beta })
    }
}

/// Non-negative scene depth, `[N, 1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap(Tensor);

impl DepthMap {
    pub fn new(depth: Tensor) -> Result<Self> {
        let (_, c, _, _) = depth.dims4()?;
        if c != 1 {
            return Err(Error::dim(format!("depth map must have 1 channel, got {c}")));
        }
        if let Some(bad) = depth.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!("depth must be finite and >= 0, found {bad}")));
        }
        Ok(DepthMap(depth))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Transmission in `[t_min, 1]`, `[N, 1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionMap {
    t: Tensor,
    t_min: f64,
}

impl TransmissionMap {
    /// Wraps `t`, checking `t_min ≤ t ≤ 1` everywhere. `t_min = 0` is accepted
    /// so the dense-haze limit can be represented, but such a map cannot be
    /// divided by.
    pub fn new(t: Tensor, t_min: f64) -> Result<Self> {
        let (_, c, _, _) = t.dims4()?;
        if c != 1 {
            return Err(Error::dim(format!("transmission must have 1 channel, got {c}")));
        }
        if !(0.0..1.0).contains(&t_min) {
            return Err(Error::Contract(format!("t_min {t_min} outside [0, 1)")));
        }
        if let Some(bad) = t.data().iter().find(|&&v| !(v >= t_min && v <= 1.0)) {
            return Err(Error::Contract(format!(
                "transmission value {bad} outside [{t_min}, 1]"
            )));
        }
        Ok(TransmissionMap { t, t_min })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.t
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn into_tensor(self) -> Tensor {
        self.t
    }
}

/// `t = exp(−β·d)` without the floor.
pub fn transmission_unclamped(d: &DepthMap, beta: f64) -> Result<Tensor> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta {beta} must be > 0")));
    }
    Ok(d.tensor().map(|v| (-beta * v).exp()))
}

/// `t = max(t_min, exp(−β·d))`.
pub fn transmission_from_depth(d: &DepthMap, beta: f64, t_min: f64) -> Result<TransmissionMap> {
    if !(t_min > 0.0 && t_min < 1.0) {
        return Err(Error::Contract(format!("t_min {t_min} outside (0, 1)")));
    }
    let t = transmission_unclamped(d, beta)?.map(|v| v.max(t_min));
    TransmissionMap::new(t, t_min)
}

/// `I = J·t + A·(1 − t)`, with `t` shared across colour channels.
pub fn synthesize_haze(clear: &Tensor, t: &TransmissionMap, airlight: f64) -> Result<Tensor> {
    let (n, c, h, w) = clear.dims4()?;
    check_spatial(clear, t.tensor(), "clear image")?;
    let td = t.tensor().data();
    let mut out = clear.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let tv = td[pixel_index(i, n, c, h, w)];
        *v = *v * tv + airlight * (1.0 - tv);
    }
    Ok(out)
}

/// `K = I/t`. Not clamped; `K` may exceed 1.
pub fn ratio_image(hazy: &Tensor, t: &TransmissionMap) -> Result<Tensor> {
    if t.t_min() <= 0.0 {
        return Err(Error::Contract("ratio image needs a positive transmission floor".into()));
    }
    let (n, c, h, w) = hazy.dims4()?;
    check_spatial(hazy, t.tensor(), "hazy image")?;
    let td = t.tensor().data();
    if let Some(bad) = td.iter().find(|&&v| v < t.t_min()) {
        return Err(Error::Contract(format!(
            "transmission {bad} below floor {}",
            t.t_min()
        )));
    }
    let mut out = hazy.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v /= td[pixel_index(i, n, c, h, w)];
    }
    Ok(out)
}

/// `u = A·(1 − t)/t`, broadcast to three channels.
pub fn residual_target(t: &TransmissionMap, airlight: f64) -> Result<Tensor> {
    let (n, _, h, w) = t.tensor().dims4()?;
    let td = t.tensor().data();
    if td.iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("residual target undefined where t = 0".into()));
    }
    Tensor::from_fn(&[n, 3, h, w], |i| {
        let tv = td[pixel_index(i, n, 3, h, w)];
        airlight * (1.0 - tv) / tv
    })
}

/// `J = K − R` without clamping.
pub fn recompose_unclamped(ratio: &Tensor, residual: &Tensor) -> Result<Tensor> {
    ratio.zip_map(residual, |k, r| k - r)
}

/// `J = clamp(K − R, 0, 1)`.
pub fn recompose(ratio: &Tensor, residual: &Tensor) -> Result<Tensor> {
    ratio.zip_map(residual, |k, r| (k - r).clamp(0.0, 1.0))
}

fn check_spatial(img: &Tensor, map: &Tensor, what: &str) -> Result<()> {
    let (n, _, h, w) = img.dims4()?;
    let (mn, _, mh, mw) = map.dims4()?;
    if (n, h, w) != (mn, mh, mw) {
        return Err(Error::dim(format!(
            "{what} {:?} does not match transmission {:?}",
            img.shape(),
            map.shape()
        )));
    }
    Ok(())
}

/// Index into a single-channel map for element `i` of an `[n, c, h, w]` image.
fn pixel_index(i: usize, _n: usize, c: usize, h: usize, w: usize) -> usize {
    let hw = h * w;
    (i / (c * hw)) * hw + i % hw
}
