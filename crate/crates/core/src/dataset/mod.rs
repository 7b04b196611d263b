//! Hazy/clear training pairs from clear images and depth maps.

mod augment;
pub mod io;
mod mini;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use augment::{augment, crop, hflip, resize_bilinear, resize_to_train, rot90, Augmentation, TRAIN_SIZE};
pub use io::load_clear_depth;
pub use mini::{mini_dataset, mini_split, write_mini_dataset, MINI_PAIRS, MINI_SEED, MINI_SIZE};

use crate::error::{Error, Result};
use crate::scattering::{synthesize_haze, transmission_from_depth, DepthMap, HazeParams, TransmissionMap, DEFAULT_T_MIN};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Sampling ranges for airlight and scattering coefficient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HazeRanges {
    pub airlight: (f64, f64),
    pub beta: (f64, f64),
    pub t_min: f64,
}

impl Default for HazeRanges {
    fn default() -> Self {
        HazeRanges {
            airlight: (0.7, 1.0),
            beta: (0.4, 1.6),
            t_min: DEFAULT_T_MIN,
        }
    }
}

impl HazeRanges {
    pub fn validate(&self) -> Result<()> {
        let (a0, a1) = self.airlight;
        let (b0, b1) = self.beta;
        if !(a0 > 0.0 && a0 <= a1 && a1 <= 1.0) {
            return Err(Error::Config(format!("airlight range [{a0}, {a1}] must lie in (0, 1]")));
        }
        if !(b0 > 0.0 && b0 <= b1 && b1.is_finite()) {
            return Err(Error::Config(format!("beta range [{b0}, {b1}] must be positive")));
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(Error::Config(format!("t_min {} outside (0, 1)", self.t_min)));
        }
        Ok(())
    }

    /// Uniform draws `A ∈ [a0, a1]`, `β ∈ [b0, b1]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> HazeParams {
        let airlight = rng.random_range(self.airlight.0..=self.airlight.1);
        let beta = rng.random_range(self.beta.0..=self.beta.1);
        HazeParams { airlight, beta }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HazePair {
    /// `[1, 3, h, w]`
    pub clear: Tensor,
    pub depth: DepthMap,
    pub params: HazeParams,
    /// `[1, 3, h, w]`
    pub hazy: Tensor,
    pub transmission: TransmissionMap,
}

/// Builds a pair from fixed haze parameters.
pub fn make_pair_with(clear: &Tensor, depth: &DepthMap, params: HazeParams, t_min: f64) -> Result<HazePair> {
    let (n, c, h, w) = clear.dims4()?;
    let (dn, _, dh, dw) = depth.tensor().dims4()?;
    if n != 1 || c != 3 || dn != 1 || (dh, dw) != (h, w) {
        return Err(Error::dim(format!(
            "pair needs a [1,3,h,w] image and a matching [1,1,h,w] depth, got {:?} and {:?}",
            clear.shape(),
            depth.tensor().shape()
        )));
    }
    let params = HazeParams::new(params.airlight, params.beta)?;
    let transmission = transmission_from_depth(depth, params.beta, t_min)?;
    let hazy = synthesize_haze(clear, &transmission, params.airlight)?;
    Ok(HazePair {
        clear: clear.clone(),
        depth: depth.clone(),
        params,
        hazy,
        transmission,
    })
}

/// Samples `(A, β)` from `ranges` and synthesizes the hazy image.
pub fn make_pair<R: Rng + ?Sized>(clear: &Tensor, depth: &DepthMap, ranges: &HazeRanges, rng: &mut R) -> Result<HazePair> {
    ranges.validate()?;
    let params = ranges.sample(rng);
    make_pair_with(clear, depth, params, ranges.t_min)
}

/// Per-sample generator: `seed` picks the stream family, `index` the stream.
pub fn pair_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[1, 3, h, w]` in `[0, 1]`.
    pub clear: Tensor,
    pub depth: DepthMap,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub clear: PathBuf,
    pub depth: PathBuf,
    pub split: Split,
}

/// Parsed `clear<TAB>depth<TAB>split` file; relative paths resolve against
/// the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [clear, depth, split] = fields[..] else {
                return Err(Error::Config(format!(
                    "manifest line {}: expected 3 tab-separated fields, found {}",
                    lineno + 1,
                    fields.len()
                )));
            };
            let split = Split::parse(split.trim())
                .map_err(|e| Error::Config(format!("manifest line {}: {e}", lineno + 1)))?;
            entries.push(ManifestEntry {
                clear: base.join(clear),
                depth: base.join(depth),
                split,
            });
        }
        let m = DatasetManifest { entries };
        m.check_disjoint()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn check_disjoint(&self) -> Result<()> {
        let mut seen: HashSet<(&Path, Split)> = HashSet::new();
        for e in &self.entries {
            for p in [e.clear.as_path(), e.depth.as_path()] {
                let other = match e.split {
                    Split::Train => Split::Test,
                    Split::Test => Split::Train,
                };
                if seen.contains(&(p, other)) {
                    return Err(Error::Config(format!("{} appears in both splits", p.display())));
                }
                seen.insert((p, e.split));
            }
        }
        Ok(())
    }

    /// Reads every image; fails on the first unreadable file.
    pub fn read(&self) -> Result<Dataset> {
        let samples = self
            .entries
            .iter()
            .map(|e| {
                let (clear, depth) = load_clear_depth(&e.clear, &e.depth)?;
                let id = e
                    .clear
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| e.clear.display().to_string());
                Ok(Sample { id, clear, depth, split: e.split })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { samples })
    }
}

/// Clear images and depth maps held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// Hazy pairs for one split; sample `i` of the dataset always uses
    /// stream `i` of `seed`, so pairs do not depend on which split is asked for.
    pub fn pairs(&self, split: Split, ranges: &HazeRanges, seed: u64) -> Result<Vec<(String, HazePair)>> {
        let mut out = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            if s.split != split {
                continue;
            }
            let mut rng = pair_rng(seed, i);
            out.push((s.id.clone(), make_pair(&s.clear, &s.depth, ranges, &mut rng)?));
        }
        if out.is_empty() {
            return Err(Error::Config(format!("the {} split is empty", split.name())));
        }
        Ok(out)
    }

    /// Shrinks every sample to 16×16 (bilinear) before haze synthesis.
    pub fn resized_to_train(&self) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    id: s.id.clone(),
                    clear: resize_to_train(&s.clear)?,
                    depth: DepthMap::new(resize_to_train(s.depth.tensor())?)?,
                    split: s.split,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { samples })
    }
}

/// Epoch ordering over `n` items.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    pub n: usize,
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
}

impl BatchPlan {
    pub fn new(n: usize, batch_size: usize, shuffle: bool, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if n == 0 {
            return Err(Error::Config("cannot batch an empty split".into()));
        }
        Ok(BatchPlan { n, batch_size, shuffle, seed })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    /// Index batches for `epoch`; the last one may be short.
    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n).collect();
        if self.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
        }
        order.chunks(self.batch_size).map(|c| c.to_vec()).collect()
    }
}

/// Stacked `[b, 3, s, s]` hazy and clear images and `[b, 1, s, s]` transmission.
#[derive(Clone, Debug)]
pub struct Batch {
    pub hazy: Tensor,
    pub clear: Tensor,
    pub transmission: Tensor,
}

impl Batch {
    pub fn stack(pairs: &[HazePair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let hazy: Vec<Tensor> = pairs.iter().map(|p| p.hazy.clone()).collect();
        let clear: Vec<Tensor> = pairs.iter().map(|p| p.clear.clone()).collect();
        let t: Vec<Tensor> = pairs.iter().map(|p| p.transmission.tensor().clone()).collect();
        Ok(Batch {
            hazy: Tensor::concat_batch(&hazy)?,
            clear: Tensor::concat_batch(&clear)?,
            transmission: Tensor::concat_batch(&t)?,
        })
    }

    pub fn len(&self) -> usize {
        self.hazy.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Augmented training batches for one epoch.
pub fn batches<R: Rng + ?Sized>(
    pairs: &[HazePair],
    plan: &BatchPlan,
    epoch: usize,
    crop_size: usize,
    rng: &mut R,
) -> Result<Vec<Batch>> {
    plan.epoch(epoch)
        .into_iter()
        .map(|idx| {
            let aug = idx
                .iter()
                .map(|&i| augment(&pairs[i], crop_size, rng))
                .collect::<Result<Vec<_>>>()?;
            Batch::stack(&aug)
        })
        .collect()
}
