//! The two-network dehazer.
//!
//! The backbone estimates a transmission map `t` from the hazy image, forms
//! the ratio image `K = I/t` and predicts a residual `R′` with a plain
//! 13-layer CNN. The attention module refines `R′` into `R`, and the output
//! is `J = K − R`. The `ResidualOnly` variant skips the attention module
//! and uses `R′` directly.

pub mod attention;
pub mod backbone;
mod graph;
mod params;

use serde::{Deserialize, Serialize};

pub use graph::{update_running_stats, BnStats, Graph, Mode};
pub use params::{param_specs, Init, ModelParams, ParamSpec, Slot};

use crate::error::{Error, Result};
use crate::scattering::DEFAULT_T_MIN;
use crate::tensor::{Tape, Tensor, Var};

/// Channels entering the attention module: `R′` (3) + 3×3 branch (3) + 5×5 branch (9).
pub const EMBED_CHANNELS: usize = 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_size: usize,
    pub trans_channels: usize,
    pub slice_groups: usize,
    pub residual_depth: usize,
    pub residual_width: usize,
    pub t_min: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_size: 16,
            trans_channels: 16,
            slice_groups: 4,
            residual_depth: 13,
            residual_width: 16,
            t_min: DEFAULT_T_MIN,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size < 8 || !self.input_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "input size {} must be even and at least 8",
                self.input_size
            )));
        }
        if self.slice_groups == 0 || !self.trans_channels.is_multiple_of(self.slice_groups) {
            return Err(Error::Config(format!(
                "{} transmission channels do not split into {} groups",
                self.trans_channels, self.slice_groups
            )));
        }
        if self.residual_depth < 2 || self.residual_width == 0 {
            return Err(Error::Config("residual net needs depth >= 2 and width >= 1".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(Error::Config(format!("t_min {} outside (0, 1)", self.t_min)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub use_global_tokens: bool,
    pub global_tokens: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_size: 4,
            embed_dim: 64,
            n_layers: 2,
            heads: 4,
            mlp_ratio: 2.0,
            use_global_tokens: true,
            global_tokens: 4,
        }
    }
}

impl EncoderConfig {
    pub fn num_patches(&self, image_size: usize) -> Result<usize> {
        if self.patch_size == 0 || !image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "patch size {} does not divide {image_size}",
                self.patch_size
            )));
        }
        let g = image_size / self.patch_size;
        Ok(g * g)
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64) * self.mlp_ratio).round().max(1.0) as usize
    }

    pub fn validate(&self, image_size: usize) -> Result<()> {
        self.num_patches(image_size)?;
        if self.n_layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.use_global_tokens {
            attention::global_pooling_matrix(self, image_size)?;
        }
        Ok(())
    }
}

/// Full model or the ablation without the attention module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    ResidualOnly,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::ResidualOnly => "residual_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "residual_only" => Ok(Variant::ResidualOnly),
            other => Err(Error::Config(format!(
                "unknown ablation {other:?} (expected full or residual_only)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: ArchConfig,
    pub encoder: EncoderConfig,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: ArchConfig::default(),
            encoder: EncoderConfig::default(),
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    /// Smallest configuration used for whole-model gradient checks:
    /// 8×8 input, one encoder layer, one head.
    pub fn minimal() -> Self {
        ModelConfig {
            arch: ArchConfig {
                input_size: 8,
                trans_channels: 8,
                slice_groups: 4,
                residual_depth: 3,
                residual_width: 4,
                t_min: DEFAULT_T_MIN,
            },
            encoder: EncoderConfig {
                patch_size: 4,
                embed_dim: 8,
                n_layers: 1,
                heads: 1,
                mlp_ratio: 2.0,
                use_global_tokens: true,
                global_tokens: 4,
            },
            variant: Variant::Full,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.variant == Variant::Full {
            self.encoder.validate(self.arch.input_size)?;
        }
        Ok(())
    }
}

/// Tape variables produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Diagnostics {
    pub t: Var,
    pub ratio: Var,
    /// Backbone residual `R′`.
    pub backbone_residual: Var,
    /// Residual actually subtracted from `K` (`R`, or `R′` for the ablation).
    pub residual: Var,
    /// `K − R` before clamping.
    pub dehazed_raw: Var,
    /// `clamp(K − R, 0, 1)`.
    pub dehazed: Var,
}

/// Backbone, then (for the full variant) the attention module, then `J = K − R`.
pub fn dhformer_forward(g: &mut Graph, cfg: &ModelConfig, hazy: Var) -> Result<Diagnostics> {
    let (_, _, h, w) = g.tape.value(hazy).dims4()?;
    if h != cfg.arch.input_size || w != cfg.arch.input_size {
        return Err(Error::dim(format!(
            "model expects {0}x{0} inputs, got {h}x{w}",
            cfg.arch.input_size
        )));
    }
    let bb = backbone::backbone_forward(g, &cfg.arch, hazy)?;
    let residual = match cfg.variant {
        Variant::Full => attention::attention_forward(g, &cfg.encoder, bb.residual)?,
        Variant::ResidualOnly => bb.residual,
    };
    let dehazed_raw = g.tape.sub(bb.ratio, residual)?;
    let dehazed = g.tape.clamp(dehazed_raw, 0.0, 1.0);
    Ok(Diagnostics {
        t: bb.t,
        ratio: bb.ratio,
        backbone_residual: bb.residual,
        residual,
        dehazed_raw,
        dehazed,
    })
}

/// Eval-mode dehazing of a `[b, 3, S, S]` batch.
pub fn dehaze(params: &ModelParams, cfg: &ModelConfig, hazy: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mut g = Graph::new(&mut tape, params, Mode::Eval);
    let x = g.constant(hazy.clone());
    let d = dhformer_forward(&mut g, cfg, x)?;
    Ok(tape.value(d.dehazed).clone())
}
