use std::collections::BTreeMap;

use super::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

/// Whether batch norm uses batch or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; parameters are differentiable leaves.
    Train,
    /// Running statistics; parameters enter as constants.
    Eval,
}

/// Batch statistics observed by one batch-norm layer during a training pass.
#[derive(Clone, Debug)]
pub struct BnStats {
    pub layer: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// A forward pass under construction: the tape plus the mapping from
/// parameter names to tape variables.
pub struct Graph<'a> {
    pub tape: &'a mut Tape,
    params: &'a ModelParams,
    bound: BTreeMap<String, Var>,
    mode: Mode,
    pub bn_eps: f64,
    pub bn_stats: Vec<BnStats>,
    /// When set, every attention probability matrix is copied here.
    pub attention_log: Option<Vec<Tensor>>,
}

impl<'a> Graph<'a> {
    pub fn new(tape: &'a mut Tape, params: &'a ModelParams, mode: Mode) -> Self {
        Graph {
            tape,
            params,
            bound: BTreeMap::new(),
            mode,
            bn_eps: 1e-5,
            bn_stats: Vec::new(),
            attention_log: None,
        }
    }

    /// Uses `var` for parameter `name` instead of binding from the store.
    pub fn bind(&mut self, name: &str, var: Var) {
        self.bound.insert(name.to_string(), var);
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Tape variable for parameter `name`, bound on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.params.get(name)?.clone();
        let v = if self.mode == Mode::Train && self.params.is_param(name) {
            self.tape.leaf(t)
        } else {
            self.tape.constant(t)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// Gradients of every bound trainable parameter.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .filter(|(name, _)| self.params.is_param(name))
            .map(|(name, &v)| (name.clone(), grads.tensor(v)))
            .collect()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    // ---- layers ----------------------------------------------------------

    pub fn conv(&mut self, name: &str, x: Var, pad: usize, bias: bool) -> Result<Var> {
        let w = self.param(&format!("{name}.w"))?;
        let b = if bias {
            Some(self.param(&format!("{name}.b"))?)
        } else {
            None
        };
        self.tape.conv2d(x, w, b, 1, pad)
    }

    pub fn linear(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        self.tape.linear(x, w, Some(b))
    }

    pub fn layer_norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let g = self.param(&format!("{name}.gamma"))?;
        let b = self.param(&format!("{name}.beta"))?;
        self.tape.layer_norm(x, g, b, 1e-5)
    }

    pub fn batch_norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let g = self.param(&format!("{name}.gamma"))?;
        let b = self.param(&format!("{name}.beta"))?;
        match self.mode {
            Mode::Train => {
                let (y, mean, var) = self.tape.batch_norm(x, g, b, self.bn_eps)?;
                self.bn_stats.push(BnStats {
                    layer: name.to_string(),
                    mean,
                    var,
                });
                Ok(y)
            }
            Mode::Eval => {
                let c = self.tape.shape(x)[1];
                let rm = self.params.get(&format!("{name}.running_mean"))?;
                let rv = self.params.get(&format!("{name}.running_var"))?;
                let gamma = self.tape.value(g).data();
                let beta = self.tape.value(b).data();
                if rm.numel() != c || gamma.len() != c {
                    return Err(Error::dim(format!("batch norm {name} expects {c} channels")));
                }
                let scale: Vec<f64> = (0..c)
                    .map(|i| gamma[i] / (rv.data()[i] + self.bn_eps).sqrt())
                    .collect();
                let shift: Vec<f64> = (0..c)
                    .map(|i| beta[i] - rm.data()[i] * scale[i])
                    .collect();
                let s = self.tape.constant(Tensor::new(&[1, c, 1, 1], scale)?);
                let t = self.tape.constant(Tensor::new(&[1, c, 1, 1], shift)?);
                let y = self.tape.mul(x, s)?;
                self.tape.add(y, t)
            }
        }
    }
}

/// Folds observed batch statistics into the running buffers.
pub fn update_running_stats(params: &mut ModelParams, stats: &[BnStats], momentum: f64) -> Result<()> {
    for s in stats {
        let rm = params.get_mut(&format!("{}.running_mean", s.layer))?;
        for (r, &m) in rm.data_mut().iter_mut().zip(&s.mean) {
            *r = (1.0 - momentum) * *r + momentum * m;
        }
        let rv = params.get_mut(&format!("{}.running_var", s.layer))?;
        for (r, &v) in rv.data_mut().iter_mut().zip(&s.var) {
            *r = (1.0 - momentum) * *r + momentum * v;
        }
    }
    Ok(())
}
