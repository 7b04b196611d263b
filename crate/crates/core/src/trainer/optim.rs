use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?} (expected sgd or adam)"))),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state over named tensors.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Optimizer {
            kind,
            lr,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of a single named tensor (`step` already incremented).
    fn update(&mut self, name: &str, p: &mut [f64], g: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (pi, gi) in p.iter_mut().zip(g) {
                    *pi -= self.lr * gi;
                }
            }
            OptimizerKind::Adam => {
                let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; p.len()]);
                let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; p.len()]);
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..p.len() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    p[i] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
                }
            }
        }
    }

    /// Updates every trainable parameter; each must have a gradient of
    /// matching shape.
    pub fn step(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, t) in params.params() {
            match grads.get(name) {
                Some(g) if g.shape() == t.shape() => {}
                Some(g) => {
                    return Err(Error::Contract(format!(
                        "gradient for {name} has shape {:?}, parameter is {:?}",
                        g.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Contract(format!("missing gradient for {name}"))),
            }
        }
        self.step += 1;
        let names: Vec<String> = params.params().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let g = &grads[&name];
            let p = params.get_mut(&name)?;
            self.update(&name, p.data_mut(), g.data());
        }
        Ok(())
    }

    /// Update of a bare tensor, for use outside a model.
    pub fn step_tensor(&mut self, name: &str, p: &mut Tensor, g: &Tensor) -> Result<()> {
        if p.shape() != g.shape() {
            return Err(Error::Contract(format!("gradient shape {:?} != parameter {:?}", g.shape(), p.shape())));
        }
        self.step += 1;
        self.update(name, p.data_mut(), g.data());
        Ok(())
    }
}
