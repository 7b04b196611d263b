//! Training loop, checkpoints, tiled inference, evaluation and the
//! attention ablation.

mod ablation;
mod checkpoint;
mod infer;
mod optim;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use ablation::{
    ablation_compare, pct_delta, AblationReport, AblationRun, REFERENCE_PSNR_GAIN_PCT, REFERENCE_SSIM_GAIN_PCT,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, FORMAT_VERSION,
    MAGIC,
};
pub use infer::{
    blend_weight_sum, evaluate, evaluate_with, identity_dehaze, infer_tiled, oracle_dehaze, tile_ramp, tile_starts,
    DEFAULT_OVERLAP,
};
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::dataset::{batches, Augmentation, Batch, BatchPlan, Dataset, HazePair, HazeRanges, Split, TRAIN_SIZE};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::backbone::loss_residual;
use crate::model::{dhformer_forward, update_running_stats, Graph, Mode, ModelConfig, ModelParams, Variant};
use crate::tensor::Tape;

/// Arithmetic precision; only double precision is implemented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F64,
}

impl Precision {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unsupported precision {other:?} (only f64)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub precision: Precision,
    pub ablation: Variant,
    /// Random crop, flip and right-angle rotation per sample.
    pub augment: bool,
    /// Shrink every image to 16×16 before synthesis instead of cropping.
    pub pre_resize: bool,
    /// Share of the train split held out for divergence checks.
    pub val_fraction: f64,
    pub bn_momentum: f64,
    pub airlight_range: (f64, f64),
    pub beta_range: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        let haze = HazeRanges::default();
        TrainConfig {
            epochs: 150,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            precision: Precision::F64,
            ablation: Variant::Full,
            augment: true,
            pre_resize: false,
            val_fraction: 0.1,
            bn_momentum: 0.1,
            airlight_range: haze.airlight,
            beta_range: haze.beta,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::Config(format!("bn_momentum {} outside (0, 1]", self.bn_momentum)));
        }
        self.haze().validate()
    }

    pub fn haze(&self) -> HazeRanges {
        HazeRanges {
            airlight: self.airlight_range,
            beta: self.beta_range,
            ..HazeRanges::default()
        }
    }

    /// Hex SHA-256 of the JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Settings for the overfit probe: full batch, no augmentation, no held-out data.
    pub fn overfit(steps: usize, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            epochs: steps,
            batch_size,
            seed,
            augment: false,
            val_fraction: 0.0,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<LossRecord>,
    pub val_losses: Vec<f64>,
    pub best_val_loss: Option<f64>,
    pub epochs: usize,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.history.first().map_or(f64::NAN, |r| r.loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn meta(&self, model: &ModelConfig, cfg: &TrainConfig) -> CheckpointMeta {
        CheckpointMeta {
            model: model.clone(),
            train_digest: cfg.digest(),
            epoch: self.epochs,
            best_val_loss: self.best_val_loss,
        }
    }
}

/// `step,epoch,loss` with full-precision losses.
pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("step,epoch,loss\n");
    for r in history {
        let _ = writeln!(out, "{},{},{:e}", r.step, r.epoch, r.loss);
    }
    out
}

/// Residual loss of one batch; also returns the graph's batch-norm statistics
/// and named gradients when `train` is set.
fn batch_loss(
    params: &ModelParams,
    model: &ModelConfig,
    batch: &Batch,
    mode: Mode,
) -> Result<(f64, Option<(std::collections::BTreeMap<String, crate::Tensor>, Vec<crate::model::BnStats>)>)> {
    let mut tape = Tape::new();
    let mut g = Graph::new(&mut tape, params, mode);
    let x = g.constant(batch.hazy.clone());
    let j = g.constant(batch.clear.clone());
    let d = dhformer_forward(&mut g, model, x)?;
    let l = loss_residual(&mut g, d.residual, d.ratio, j)?;
    let loss = g.tape.value(l).data()[0];
    if mode == Mode::Eval || !loss.is_finite() {
        return Ok((loss, None));
    }
    let grads = g.tape.backward(l)?;
    let named = g.param_grads(&grads);
    let stats = std::mem::take(&mut g.bn_stats);
    Ok((loss, Some((named, stats))))
}

/// Top-left window of the model's input size (no-op when sizes match).
fn fit_to_model(pair: &HazePair, size: usize) -> Result<HazePair> {
    let (_, _, h, w) = pair.clear.dims4()?;
    if (h, w) == (size, size) {
        return Ok(pair.clone());
    }
    Augmentation {
        crop: Some((0, 0)),
        ..Augmentation::identity(size)
    }
    .apply_pair(pair)
}

/// Trains on explicit pairs. `val` is only used to detect divergence.
pub fn train_pairs(train: &[HazePair], val: &[HazePair], cfg: &TrainConfig, model: &ModelConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.variant != cfg.ablation {
        return Err(Error::Config(format!(
            "model variant {} does not match ablation {}",
            model.variant.name(),
            cfg.ablation.name()
        )));
    }
    if train.is_empty() {
        return Err(Error::Config("the train split is empty".into()));
    }
    let size = model.arch.input_size;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(model, &mut init_rng)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate)?;
    let plan = BatchPlan::new(train.len(), cfg.batch_size, true, cfg.seed)?;
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    aug_rng.set_stream(1);

    let fixed: Vec<HazePair> = if cfg.augment {
        Vec::new()
    } else {
        train.iter().map(|p| fit_to_model(p, size)).collect::<Result<_>>()?
    };
    let val_batch = if val.is_empty() {
        None
    } else {
        let v: Vec<HazePair> = val.iter().map(|p| fit_to_model(p, size)).collect::<Result<_>>()?;
        Some(Batch::stack(&v)?)
    };

    let mut history = Vec::new();
    let mut val_losses = Vec::new();
    let mut best_val_loss: Option<f64> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let epoch_batches = if cfg.augment {
            batches(train, &plan, epoch, size, &mut aug_rng)?
        } else {
            plan.epoch(epoch)
                .iter()
                .map(|idx| Batch::stack(&idx.iter().map(|&i| fixed[i].clone()).collect::<Vec<_>>()))
                .collect::<Result<Vec<_>>>()?
        };
        for batch in &epoch_batches {
            let (loss, grads) = batch_loss(&params, model, batch, Mode::Train)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { batch: step, epoch, loss });
            }
            let (named, stats) = grads.expect("training pass returns gradients");
            opt.step(&mut params, &named)?;
            update_running_stats(&mut params, &stats, cfg.bn_momentum)?;
            if !params.all_finite() {
                return Err(Error::Diverged { batch: step, epoch, loss: f64::NAN });
            }
            history.push(LossRecord { step, epoch, loss });
            step += 1;
        }
        if let Some(vb) = &val_batch {
            let (vl, _) = batch_loss(&params, model, vb, Mode::Eval)?;
            if !vl.is_finite() {
                return Err(Error::Diverged { batch: step, epoch, loss: vl });
            }
            val_losses.push(vl);
            best_val_loss = Some(best_val_loss.map_or(vl, |b: f64| b.min(vl)));
        }
    }
    params.quantize_f32();
    Ok(TrainOutcome {
        params,
        history,
        val_losses,
        best_val_loss,
        epochs: cfg.epochs,
    })
}

/// Synthesizes the train split (optionally resized to 16×16), holds out the
/// last `val_fraction` of it, and trains.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, model: &ModelConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let resized;
    let ds = if cfg.pre_resize {
        resized = dataset.resized_to_train()?;
        &resized
    } else {
        dataset
    };
    let pairs: Vec<HazePair> = ds.pairs(Split::Train, &cfg.haze(), cfg.seed)?.into_iter().map(|(_, p)| p).collect();
    let n_val = (pairs.len() as f64 * cfg.val_fraction).floor() as usize;
    let (train_part, val_part) = pairs.split_at(pairs.len() - n_val);
    train_pairs(train_part, val_part, cfg, model)
}

/// The first `n` train-split samples shrunk to 16×16, hazed with `seed`.
pub fn overfit_pairs(dataset: &Dataset, n: usize, seed: u64) -> Result<Vec<(String, HazePair)>> {
    let small = Dataset {
        samples: dataset.split(Split::Train).into_iter().take(n).cloned().collect(),
    }
    .resized_to_train()?;
    let pairs = small.pairs(Split::Train, &HazeRanges::default(), seed)?;
    if pairs.len() != n {
        return Err(Error::Config(format!("train split has {} samples, probe needs {n}", pairs.len())));
    }
    debug_assert!(pairs.iter().all(|(_, p)| p.clear.shape()[2] == TRAIN_SIZE));
    Ok(pairs)
}

pub const PROBE_PAIRS: usize = 8;
pub const PROBE_STEPS: usize = 500;
/// Haze seed of the probe pairs; the training seed only changes initialization.
pub const PROBE_HAZE_SEED: u64 = 7;

/// Result of [`overfit_probe`].
#[derive(Clone, Debug)]
pub struct ProbeOutcome {
    pub trained: TrainOutcome,
    pub pairs: Vec<(String, HazePair)>,
    /// Mean PSNR of the hazy inputs against the clear images.
    pub hazy_psnr: f64,
    pub report: MetricReport,
}

impl ProbeOutcome {
    pub fn loss_ratio(&self) -> f64 {
        self.trained.final_loss() / self.trained.initial_loss()
    }

    pub fn psnr_gain(&self) -> f64 {
        self.report.mean_psnr - self.hazy_psnr
    }
}

/// Trains `variant` for `PROBE_STEPS` full-batch Adam steps on the first
/// `PROBE_PAIRS` train pairs of `dataset` (shrunk to 16×16) and scores the
/// result on those same pairs.
pub fn overfit_probe(dataset: &Dataset, variant: Variant, seed: u64) -> Result<ProbeOutcome> {
    let pairs = overfit_pairs(dataset, PROBE_PAIRS, PROBE_HAZE_SEED)?;
    let train: Vec<HazePair> = pairs.iter().map(|(_, p)| p.clone()).collect();
    let cfg = TrainConfig {
        ablation: variant,
        ..TrainConfig::overfit(PROBE_STEPS, PROBE_PAIRS, seed)
    };
    let model = ModelConfig::default().with_variant(variant);
    let trained = train_pairs(&train, &[], &cfg, &model)?;
    let hazy_psnr = evaluate_with(&pairs, identity_dehaze)?.mean_psnr;
    let report = evaluate(&trained.params, &model, &pairs)?;
    Ok(ProbeOutcome {
        trained,
        pairs,
        hazy_psnr,
        report,
    })
}
