//! PNG reading and writing for clear images and depth maps.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma, Rgb};

use crate::error::{Error, Result};
use crate::scattering::DepthMap;
use crate::tensor::Tensor;

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

fn color_name(img: &DynamicImage) -> String {
    format!("{:?}", img.color())
}

/// 8-bit RGB image as a `[1, 3, H, W]` tensor in `[0, 1]`.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = decode(path)?;
    let DynamicImage::ImageRgb8(buf) = img else {
        return Err(Error::Image {
            path: path.to_path_buf(),
            message: format!("expected 8-bit RGB, found {}", color_name(&img)),
        });
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.as_raw();
    let n = w * h;
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            data[c * n + i] = raw[3 * i + c] as f64 / 255.0;
        }
    }
    Tensor::new(&[1, 3, h, w], data)
}

/// 8- or 16-bit single-channel depth, normalized by its own maximum
/// (all-zero files stay zero).
pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h, raw): (usize, usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (b.width() as usize, b.height() as usize, b.as_raw().iter().map(|&v| v as f64).collect()),
        DynamicImage::ImageLuma16(b) => (b.width() as usize, b.height() as usize, b.as_raw().iter().map(|&v| v as f64).collect()),
        other => {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!("expected 8- or 16-bit grayscale depth, found {}", color_name(&other)),
            })
        }
    };
    let max = raw.iter().cloned().fold(0.0, f64::max);
    let data = if max > 0.0 { raw.into_iter().map(|v| v / max).collect() } else { raw };
    DepthMap::new(Tensor::new(&[1, 1, h, w], data)?)
}

/// Clear image and depth map, checked for matching spatial size.
pub fn load_clear_depth(clear: impl AsRef<Path>, depth: impl AsRef<Path>) -> Result<(Tensor, DepthMap)> {
    let c = load_rgb(clear.as_ref())?;
    let d = load_depth(depth.as_ref())?;
    if c.shape()[2..] != d.tensor().shape()[2..] {
        return Err(Error::dim(format!(
            "{} is {:?} but depth {} is {:?}",
            clear.as_ref().display(),
            &c.shape()[2..],
            depth.as_ref().display(),
            &d.tensor().shape()[2..]
        )));
    }
    Ok((c, d))
}

fn image_hw(x: &Tensor, channels: usize) -> Result<(usize, usize)> {
    match *x.shape() {
        [1, c, h, w] | [c, h, w] if c == channels => Ok((h, w)),
        ref s => Err(Error::dim(format!("cannot write shape {s:?} as a {channels}-channel image"))),
    }
}

fn save_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Writes a `[1, 3, H, W]` or `[3, H, W]` tensor as 8-bit RGB, clamping to `[0, 1]`.
pub fn save_rgb(path: impl AsRef<Path>, x: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = image_hw(x, 3)?;
    let n = h * w;
    let d = x.data();
    let mut raw = vec![0u8; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            raw[3 * i + c] = (d[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer size matches");
    buf.save(path).map_err(|e| save_err(path, e))
}

/// Writes a one-channel map in `[0, 1]` as 16-bit grayscale.
pub fn save_gray16(path: impl AsRef<Path>, x: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = image_hw(x, 1)?;
    let raw: Vec<u16> = x.data().iter().map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let buf: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer size matches");
    buf.save(path).map_err(|e| save_err(path, e))
}
