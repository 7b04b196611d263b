use std::collections::BTreeMap;

use rand::Rng;

use super::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::tensor::{init, Tensor};

/// Named trainable parameters plus non-trainable buffers (batch-norm running
/// statistics). Both maps are ordered by name, which fixes iteration order
/// for optimizers and checkpoints.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Param,
    Buffer,
}

/// Shape and init rule for one named tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub slot: Slot,
    pub init: Init,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// N(0, 2/fan_in).
    HeNormal { fan_in: usize },
    Normal { std: f64 },
    Const(f64),
}

impl ModelParams {
    /// Fresh parameters for `cfg`, drawn from `rng` in name order.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut out = ModelParams::default();
        for spec in param_specs(cfg)? {
            let t = match spec.init {
                Init::HeNormal { fan_in } => init::he_normal(&spec.shape, fan_in, rng)?,
                Init::Normal { std } => init::normal(&spec.shape, std, rng)?,
                Init::Const(v) => Tensor::full(&spec.shape, v)?,
            };
            out.insert(spec.slot, spec.name, t);
        }
        Ok(out)
    }

    pub fn insert(&mut self, slot: Slot, name: String, t: Tensor) {
        match slot {
            Slot::Param => self.params.insert(name, t),
            Slot::Buffer => self.buffers.insert(name, t),
        };
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .or_else(|| self.buffers.get(name))
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        if let Some(t) = self.params.get_mut(name) {
            return Ok(t);
        }
        self.buffers
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn is_param(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Parameters then buffers, each sorted by name.
    pub fn entries(&self) -> impl Iterator<Item = (&str, Slot, &Tensor)> {
        self.params()
            .map(|(k, v)| (k, Slot::Param, v))
            .chain(self.buffers().map(|(k, v)| (k, Slot::Buffer, v)))
    }

    /// Number of trainable scalars.
    pub fn census(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn num_tensors(&self) -> usize {
        self.params.len()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().chain(self.buffers.values()).all(Tensor::is_finite)
    }

    /// Rounds every value to the nearest f32, the precision checkpoints store.
    pub fn quantize_f32(&mut self) {
        for t in self.params.values_mut().chain(self.buffers.values_mut()) {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Checks names and shapes against what `cfg` expects.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = param_specs(cfg)?;
        let expected = specs.len();
        let present = self.params.len() + self.buffers.len();
        for spec in &specs {
            let t = self.get(&spec.name).map_err(|_| {
                Error::CheckpointMismatch(format!("missing tensor {}", spec.name))
            })?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::CheckpointMismatch(format!(
                    "{} has shape {:?}, architecture expects {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        if present != expected {
            return Err(Error::CheckpointMismatch(format!(
                "{present} tensors present, architecture defines {expected}"
            )));
        }
        Ok(())
    }
}

/// Every tensor the configured model owns, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let mut specs = Vec::new();
    let a = &cfg.arch;
    let mut p = |name: String, shape: &[usize], init: Init| {
        specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            slot: Slot::Param,
            init,
        })
    };

    // transmission branch
    p("trans.conv1.w".into(), &[a.trans_channels, 3, 3, 3], Init::HeNormal { fan_in: 27 });
    p("trans.conv1.b".into(), &[a.trans_channels], Init::Const(0.0));
    let groups_out = a.trans_channels / a.slice_groups;
    p("trans.proj.w".into(), &[1, groups_out, 1, 1], Init::HeNormal { fan_in: groups_out });
    // starts near t = 1 so the ratio image begins as the hazy input
    p("trans.proj.b".into(), &[1], Init::Const(1.0));

    // residual branch
    let w = a.residual_width;
    for i in 0..a.residual_depth {
        let last = i + 1 == a.residual_depth;
        let cin = if i == 0 { 3 } else { w };
        let cout = if last { 3 } else { w };
        p(format!("res.conv{i:02}.w"), &[cout, cin, 3, 3], Init::HeNormal { fan_in: cin * 9 });
        if last {
            p(format!("res.conv{i:02}.b"), &[cout], Init::Const(0.0));
        } else {
            p(format!("res.bn{i:02}.gamma"), &[cout], Init::Const(1.0));
            p(format!("res.bn{i:02}.beta"), &[cout], Init::Const(0.0));
        }
    }

    if cfg.variant == Variant::Full {
        let e = &cfg.encoder;
        let d = e.embed_dim;
        let raw = e.patch_size * e.patch_size * super::EMBED_CHANNELS;
        let tokens = e.num_patches(a.input_size)?;
        p("att.conv3.w".into(), &[3, 3, 3, 3], Init::HeNormal { fan_in: 27 });
        p("att.conv3.b".into(), &[3], Init::Const(0.0));
        p("att.conv5.w".into(), &[9, 3, 5, 5], Init::HeNormal { fan_in: 75 });
        p("att.conv5.b".into(), &[9], Init::Const(0.0));
        p("att.embed.w".into(), &[raw, d], Init::HeNormal { fan_in: raw });
        p("att.embed.b".into(), &[d], Init::Const(0.0));
        p("att.pos".into(), &[tokens, d], Init::Normal { std: 0.02 });
        let hidden = e.mlp_hidden();
        for l in 0..e.n_layers {
            let pre = format!("att.enc{l}");
            p(format!("{pre}.ln1.gamma"), &[d], Init::Const(1.0));
            p(format!("{pre}.ln1.beta"), &[d], Init::Const(0.0));
            for proj in ["q", "k", "v", "o"] {
                p(format!("{pre}.{proj}.w"), &[d, d], Init::HeNormal { fan_in: d });
                p(format!("{pre}.{proj}.b"), &[d], Init::Const(0.0));
            }
            p(format!("{pre}.ln2.gamma"), &[d], Init::Const(1.0));
            p(format!("{pre}.ln2.beta"), &[d], Init::Const(0.0));
            p(format!("{pre}.fc1.w"), &[d, hidden], Init::HeNormal { fan_in: d });
            p(format!("{pre}.fc1.b"), &[hidden], Init::Const(0.0));
            p(format!("{pre}.fc2.w"), &[hidden, d], Init::HeNormal { fan_in: hidden });
            p(format!("{pre}.fc2.b"), &[d], Init::Const(0.0));
        }
        p("att.ln_f.gamma".into(), &[d], Init::Const(1.0));
        p("att.ln_f.beta".into(), &[d], Init::Const(0.0));
        let ch = super::EMBED_CHANNELS;
        p("att.head.w".into(), &[d, ch], Init::HeNormal { fan_in: d });
        p("att.head.b".into(), &[ch], Init::Const(0.0));
        p("att.spatial.w".into(), &[1, 2, 7, 7], Init::HeNormal { fan_in: 98 });
        p("att.spatial.b".into(), &[1], Init::Const(0.0));
        p("att.fuse.w".into(), &[3, 2 * ch, 3, 3], Init::HeNormal { fan_in: 2 * ch * 9 });
        p("att.fuse.b".into(), &[3], Init::Const(0.0));
    }

    for i in 0..a.residual_depth.saturating_sub(1) {
        for (stat, v) in [("running_mean", 0.0), ("running_var", 1.0)] {
            specs.push(ParamSpec {
                name: format!("res.bn{i:02}.{stat}"),
                shape: vec![w],
                slot: Slot::Buffer,
                init: Init::Const(v),
            });
        }
    }
    Ok(specs)
}
