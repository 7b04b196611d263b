//! C ABI over the dehazing toolkit.
//!
//! Images cross the boundary as planar `f64` buffers of `3·height·width`
//! values in `[0, 1]` (all red, then green, then blue, rows top to bottom).
//! Every call returns a [`DhfStatus`]; on failure
//! [`dhf_last_error_message`] describes the error.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dhformer::dataset::make_pair_with;
use dhformer::metrics;
use dhformer::model::{ModelConfig, ModelParams};
use dhformer::scattering::{DepthMap, HazeParams, DEFAULT_T_MIN};
use dhformer::trainer::{infer_tiled, load_checkpoint, DEFAULT_OVERLAP};
use dhformer::{Error, Tensor};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DhfStatus {
    Ok = 0,
    NullArgument = 1,
    /// Bad sizes, shapes or values.
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Image = 5,
    /// Malformed checkpoint file.
    Format = 6,
    CheckpointMismatch = 7,
    Diverged = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 9,
}

/// A loaded checkpoint. Create with [`dhf_model_load`], release with
/// [`dhf_model_free`].
pub struct DhfModel {
    params: ModelParams,
    config: ModelConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DhfStatus {
    match e {
        Error::Dimension(_) | Error::Domain(_) | Error::Contract(_) => DhfStatus::InvalidArgument,
        Error::Config(_) => DhfStatus::Config,
        Error::Io { .. } => DhfStatus::Io,
        Error::Image { .. } => DhfStatus::Image,
        Error::Format { .. } => DhfStatus::Format,
        Error::CheckpointMismatch(_) => DhfStatus::CheckpointMismatch,
        Error::Diverged { .. } => DhfStatus::Diverged,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DhfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DhfStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("{what} is null"));
            DhfStatus::NullArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            DhfStatus::Internal
        }
    }
}

fn nonnull<T>(p: *const T, what: &'static str) -> Result<*const T, Fail> {
    if p.is_null() {
        Err(Fail::Null(what))
    } else {
        Ok(p)
    }
}

fn image_len(height: usize, width: usize) -> Result<usize, Fail> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!("empty {height}x{width} image")).into());
    }
    height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::Dimension("image size overflows".into()).into())
}

/// Copies a caller buffer into a `[1, 3, h, w]` tensor.
///
/// # Safety
/// `data` must point to `3·height·width` readable values.
unsafe fn read_image(data: *const f64, height: usize, width: usize, what: &'static str) -> Result<Tensor, Fail> {
    let n = image_len(height, width)?;
    let p = nonnull(data, what)?;
    let v = std::slice::from_raw_parts(p, n).to_vec();
    Ok(Tensor::new(&[1, 3, height, width], v)?)
}

/// Library version, e.g. `"0.1.0"`. The string is static.
#[no_mangle]
pub extern "C" fn dhf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread (empty after a success).
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dhf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable. On
/// success `*out` owns a model to be passed to [`dhf_model_free`].
#[no_mangle]
pub unsafe extern "C" fn dhf_model_load(path: *const c_char, out: *mut *mut DhfModel) -> DhfStatus {
    guard(|| {
        let path = nonnull(path, "path")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path).to_str().map_err(|_| Error::Config("path is not UTF-8".into()))?;
        let ck = load_checkpoint(path)?;
        ck.params.validate(&ck.meta.model)?;
        *out = Box::into_raw(Box::new(DhfModel {
            params: ck.params,
            config: ck.meta.model,
        }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`dhf_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dhf_model_free(model: *mut DhfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Tile edge length the model was trained at (the minimum image size).
///
/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn dhf_model_tile_size(model: *const DhfModel) -> usize {
    model.as_ref().map_or(0, |m| m.config.arch.input_size)
}

/// Number of trainable scalars in the model.
///
/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn dhf_model_param_count(model: *const DhfModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.census())
}

/// Dehazes one image with overlapping tiles. `hazy` and `out` hold
/// `3·height·width` values; both sides must be at least the tile size.
///
/// # Safety
/// Buffers must be valid for the stated sizes and must not overlap.
#[no_mangle]
pub unsafe extern "C" fn dhf_dehaze(
    model: *const DhfModel,
    hazy: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
) -> DhfStatus {
    guard(|| {
        let m = nonnull(model, "model")?.as_ref().expect("checked");
        let x = read_image(hazy, height, width, "hazy")?;
        let out = nonnull(out, "out")? as *mut f64;
        let y = infer_tiled(&x, &m.params, &m.config, DEFAULT_OVERLAP)?;
        std::slice::from_raw_parts_mut(out, y.numel()).copy_from_slice(y.data());
        Ok(())
    })
}

/// # Safety
/// `x` and `y` must hold `3·height·width` values; `out` must be writable.
unsafe fn metric(
    x: *const f64,
    y: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
    f: impl FnOnce(&Tensor, &Tensor) -> dhformer::Result<f64>,
) -> DhfStatus {
    guard(|| {
        let a = read_image(x, height, width, "x")?;
        let b = read_image(y, height, width, "y")?;
        let out = nonnull(out, "out")? as *mut f64;
        *out = f(&a, &b)?;
        Ok(())
    })
}

/// PSNR in dB with peak 1; `+inf` for identical images.
///
/// # Safety
/// See [`dhf_ssim`].
#[no_mangle]
pub unsafe extern "C" fn dhf_psnr(x: *const f64, y: *const f64, height: usize, width: usize, out: *mut f64) -> DhfStatus {
    metric(x, y, height, width, out, |a, b| metrics::psnr(a, b, 1.0))
}

/// Luma SSIM with an 11×11 Gaussian window; images need at least 11 pixels per side.
///
/// # Safety
/// `x` and `y` must hold `3·height·width` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dhf_ssim(x: *const f64, y: *const f64, height: usize, width: usize, out: *mut f64) -> DhfStatus {
    metric(x, y, height, width, out, |a, b| metrics::ssim(a, b, 1.0))
}

/// FSIM; images need at least 32 pixels per side.
///
/// # Safety
/// See [`dhf_ssim`].
#[no_mangle]
pub unsafe extern "C" fn dhf_fsim(x: *const f64, y: *const f64, height: usize, width: usize, out: *mut f64) -> DhfStatus {
    metric(x, y, height, width, out, metrics::fsim)
}

/// `I = J·t + A(1 − t)` with `t = max(exp(−β·d), 0.05)`. `depth` holds
/// `height·width` non-negative values; `out_hazy` receives `3·height·width`.
///
/// # Safety
/// Buffers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn dhf_synthesize_haze(
    clear: *const f64,
    depth: *const f64,
    height: usize,
    width: usize,
    airlight: f64,
    beta: f64,
    out_hazy: *mut f64,
) -> DhfStatus {
    guard(|| {
        let j = read_image(clear, height, width, "clear")?;
        let d = nonnull(depth, "depth")?;
        let out = nonnull(out_hazy, "out_hazy")? as *mut f64;
        let dv = std::slice::from_raw_parts(d, height * width).to_vec();
        let depth = DepthMap::new(Tensor::new(&[1, 1, height, width], dv)?)?;
        let pair = make_pair_with(&j, &depth, HazeParams::new(airlight, beta)?, DEFAULT_T_MIN)?;
        std::slice::from_raw_parts_mut(out, pair.hazy.numel()).copy_from_slice(pair.hazy.data());
        Ok(())
    })
}
