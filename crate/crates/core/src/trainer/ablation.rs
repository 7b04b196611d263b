use std::fmt::Write as _;

use super::{evaluate, train_pairs, TrainConfig};
use crate::dataset::HazePair;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::{ModelConfig, Variant};

/// Published full-scale gains of the attention module over the residual-only
/// network, in percent.
pub const REFERENCE_SSIM_GAIN_PCT: f64 = 6.27;
pub const REFERENCE_PSNR_GAIN_PCT: f64 = 11.43;

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub seed: u64,
    pub full: MetricReport,
    pub residual_only: MetricReport,
    pub full_final_loss: f64,
    pub residual_final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    pub mean_full_psnr: f64,
    pub mean_residual_psnr: f64,
    pub mean_full_ssim: f64,
    pub mean_residual_ssim: f64,
    /// `100·(full − residual)/residual` of the mean PSNR.
    pub delta_psnr_pct: f64,
    pub delta_ssim_pct: f64,
}

/// `100·(full − residual)/residual`.
pub fn pct_delta(full: f64, residual: f64) -> f64 {
    100.0 * (full - residual) / residual
}

impl AblationReport {
    /// Method rows with mean PSNR/SSIM/FSIM per seed, the seed means, and
    /// the percentage gains of the full model.
    pub fn to_csv(&self) -> String {
        let fs = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("method,seed,mpsnr,mssim,mfsim\n");
        for (name, pick) in [
            ("full", (|r: &AblationRun| &r.full) as fn(&AblationRun) -> &MetricReport),
            ("residual_only", |r: &AblationRun| &r.residual_only),
        ] {
            for run in &self.runs {
                let m = pick(run);
                let _ = writeln!(out, "{name},{},{},{},{}", run.seed, m.mean_psnr, m.mean_ssim, fs(m.mean_fsim));
            }
        }
        let _ = writeln!(out, "full,mean,{},{},", self.mean_full_psnr, self.mean_full_ssim);
        let _ = writeln!(out, "residual_only,mean,{},{},", self.mean_residual_psnr, self.mean_residual_ssim);
        let _ = writeln!(out, "gain_pct,mean,{},{},", self.delta_psnr_pct, self.delta_ssim_pct);
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "full MPSNR {:.3} dB, residual-only {:.3} dB ({:+.2}%); full MSSIM {:.4}, residual-only {:.4} ({:+.2}%); reference gains +{REFERENCE_PSNR_GAIN_PCT}% PSNR, +{REFERENCE_SSIM_GAIN_PCT}% SSIM",
            self.mean_full_psnr,
            self.mean_residual_psnr,
            self.delta_psnr_pct,
            self.mean_full_ssim,
            self.mean_residual_ssim,
            self.delta_ssim_pct
        )
    }
}

/// Trains both variants with the same data and seeds and scores each on
/// `eval`.
pub fn ablation_compare(
    train: &[HazePair],
    eval: &[(String, HazePair)],
    cfg: &TrainConfig,
    model: &ModelConfig,
    seeds: &[u64],
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut runs = Vec::new();
    for &seed in seeds {
        let mut out = Vec::new();
        for variant in [Variant::Full, Variant::ResidualOnly] {
            let c = TrainConfig {
                seed,
                ablation: variant,
                ..cfg.clone()
            };
            let m = model.clone().with_variant(variant);
            let trained = train_pairs(train, &[], &c, &m)?;
            let report = evaluate(&trained.params, &m, eval)?;
            out.push((report, trained.final_loss()));
        }
        let (residual_only, residual_final_loss) = out.pop().expect("two variants");
        let (full, full_final_loss) = out.pop().expect("two variants");
        runs.push(AblationRun {
            seed,
            full,
            residual_only,
            full_final_loss,
            residual_final_loss,
        });
    }
    let n = runs.len() as f64;
    let mean = |f: &dyn Fn(&AblationRun) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let mean_full_psnr = mean(&|r| r.full.mean_psnr);
    let mean_residual_psnr = mean(&|r| r.residual_only.mean_psnr);
    let mean_full_ssim = mean(&|r| r.full.mean_ssim);
    let mean_residual_ssim = mean(&|r| r.residual_only.mean_ssim);
    Ok(AblationReport {
        delta_psnr_pct: pct_delta(mean_full_psnr, mean_residual_psnr),
        delta_ssim_pct: pct_delta(mean_full_ssim, mean_residual_ssim),
        runs,
        mean_full_psnr,
        mean_residual_psnr,
        mean_full_ssim,
        mean_residual_ssim,
    })
}
