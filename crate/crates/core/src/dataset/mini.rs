//! Procedural mini-dataset: smooth colour gradients with a few flat shapes,
//! paired with tilted depth ramps. Values are pre-quantized to the PNG bit
//! depths so a written copy loads back bit-identically.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{io, Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::scattering::DepthMap;
use crate::tensor::Tensor;

pub const MINI_PAIRS: usize = 64;
pub const MINI_SIZE: usize = 32;
pub const MINI_SEED: u64 = 0x5eed_da7a;

/// Every eighth pair (index ≡ 7 mod 8) is held out: 56 train, 8 test.
pub fn mini_split(index: usize) -> Split {
    if index % 8 == 7 {
        Split::Test
    } else {
        Split::Train
    }
}

fn q8(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn clear_image(rng: &mut ChaCha8Rng, s: usize) -> Tensor {
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dy, dx) = angle.sin_cos();
    let freq = rng.random_range(0.2..0.9);
    let amp = rng.random_range(0.02..0.08);
    let mut shapes = Vec::new();
    for _ in 0..rng.random_range(1..4) {
        let cy = rng.random_range(0.0..s as f64);
        let cx = rng.random_range(0.0..s as f64);
        let r = rng.random_range(3.0..9.0);
        let col: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let disk = rng.random_bool(0.5);
        shapes.push((cy, cx, r, col, disk));
    }
    let n = s * s;
    let mut data = vec![0.0; 3 * n];
    for y in 0..s {
        for x in 0..s {
            let (fy, fx) = (y as f64 / (s - 1) as f64, x as f64 / (s - 1) as f64);
            let t = (0.5 + 0.5 * ((fx - 0.5) * dx + (fy - 0.5) * dy) * std::f64::consts::SQRT_2).clamp(0.0, 1.0);
            let wave = amp * ((x as f64 * freq).sin() + (y as f64 * freq * 0.7).cos());
            let mut px: [f64; 3] = std::array::from_fn(|c| c0[c] * (1.0 - t) + c1[c] * t + wave);
            for &(cy, cx, r, col, disk) in &shapes {
                let (ey, ex) = (y as f64 - cy, x as f64 - cx);
                let inside = if disk { ey * ey + ex * ex <= r * r } else { ey.abs() <= r && ex.abs() <= r * 0.6 };
                if inside {
                    px = col;
                }
            }
            for c in 0..3 {
                data[c * n + y * s + x] = q8(px[c]);
            }
        }
    }
    Tensor::new(&[1, 3, s, s], data).expect("valid shape")
}

fn depth_ramp(rng: &mut ChaCha8Rng, s: usize) -> DepthMap {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dy, dx) = angle.sin_cos();
    let near = rng.random_range(0.0..0.4);
    let mut raw = vec![0.0; s * s];
    for y in 0..s {
        for x in 0..s {
            let (fy, fx) = (y as f64 / (s - 1) as f64 - 0.5, x as f64 / (s - 1) as f64 - 0.5);
            raw[y * s + x] = near + 1.0 + fx * dx + fy * dy;
        }
    }
    let max = raw.iter().cloned().fold(0.0, f64::max);
    let data = raw.into_iter().map(|v| (v / max * 65535.0).round() / 65535.0).collect();
    DepthMap::new(Tensor::new(&[1, 1, s, s], data).expect("valid shape")).expect("depth is non-negative")
}

/// The bundled 64-pair, 32×32 dataset, generated from a fixed seed.
pub fn mini_dataset() -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(MINI_SEED);
    let samples = (0..MINI_PAIRS)
        .map(|i| Sample {
            id: format!("mini_{i:03}"),
            clear: clear_image(&mut rng, MINI_SIZE),
            depth: depth_ramp(&mut rng, MINI_SIZE),
            split: mini_split(i),
        })
        .collect();
    Dataset { samples }
}

/// Writes `clear/mini_XXX.png` (8-bit RGB), `depth/mini_XXX.png` (16-bit
/// gray) and `manifest.tsv` under `dir`. Returns the manifest path.
pub fn write_mini_dataset(dir: impl AsRef<Path>) -> Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    for sub in ["clear", "depth"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut manifest = String::new();
    for s in mini_dataset().samples {
        let clear = format!("clear/{}.png", s.id);
        let depth = format!("depth/{}.png", s.id);
        io::save_rgb(dir.join(&clear), &s.clear)?;
        io::save_gray16(dir.join(&depth), s.depth.tensor())?;
        manifest.push_str(&format!("{clear}\t{depth}\t{}\n", s.split.name()));
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
