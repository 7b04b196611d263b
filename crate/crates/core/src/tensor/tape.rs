use std::fmt;

use super::kernels::{self, col2im_acc, gemm_acc, gemm_acc_at, gemm_acc_bt, im2col, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActKind {
    Relu,
    Sigmoid,
    /// tanh approximation.
    Gelu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

/// Names every differentiable primitive the tape records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    Affine,
    MatMul,
    Conv2d,
    Relu,
    Sigmoid,
    Gelu,
    BatchNorm,
    LayerNorm,
    MaxPool,
    AvgPool,
    Softmax,
    Reshape,
    Permute,
    Concat,
    Slice,
    Upsample,
    Maximum,
    Clamp,
    Reduce,
    Sum,
    Patches,
}

impl Primitive {
    pub const ALL: [Primitive; 25] = [
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Div,
        Primitive::Affine,
        Primitive::MatMul,
        Primitive::Conv2d,
        Primitive::Relu,
        Primitive::Sigmoid,
        Primitive::Gelu,
        Primitive::BatchNorm,
        Primitive::LayerNorm,
        Primitive::MaxPool,
        Primitive::AvgPool,
        Primitive::Softmax,
        Primitive::Reshape,
        Primitive::Permute,
        Primitive::Concat,
        Primitive::Slice,
        Primitive::Upsample,
        Primitive::Maximum,
        Primitive::Clamp,
        Primitive::Reduce,
        Primitive::Sum,
        Primitive::Patches,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Div => "div",
            Primitive::Affine => "affine",
            Primitive::MatMul => "matmul",
            Primitive::Conv2d => "conv2d",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Gelu => "gelu",
            Primitive::BatchNorm => "batchnorm2d",
            Primitive::LayerNorm => "layernorm",
            Primitive::MaxPool => "maxpool",
            Primitive::AvgPool => "avgpool",
            Primitive::Softmax => "softmax",
            Primitive::Reshape => "reshape",
            Primitive::Permute => "permute",
            Primitive::Concat => "concat",
            Primitive::Slice => "slice",
            Primitive::Upsample => "upsample_bilinear",
            Primitive::Maximum => "maximum",
            Primitive::Clamp => "clamp",
            Primitive::Reduce => "reduce",
            Primitive::Sum => "sum",
            Primitive::Patches => "patches",
        }
    }

    pub fn parse(name: &str) -> Option<Primitive> {
        Primitive::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Op {
    Leaf,
    Binary {
        a: Var,
        b: Var,
        kind: BinaryKind,
        // flat index into `b` for every output element when `b` is broadcast
        bmap: Option<Vec<usize>>,
    },
    Affine {
        a: Var,
        mul: f64,
    },
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        batch: usize,
        filters: usize,
    },
    Act {
        a: Var,
        kind: ActKind,
    },
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        batch: bool,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Pool {
        x: Var,
        kind: PoolKind,
        k: usize,
        stride: usize,
        pad: usize,
        argmax: Vec<usize>,
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Reshape {
        x: Var,
    },
    /// Every output element copies exactly one input element.
    Gather {
        x: Var,
        map: Vec<usize>,
        prim: Primitive,
    },
    Concat {
        parts: Vec<Var>,
        outer: usize,
        inner: usize,
        lens: Vec<usize>,
    },
    Upsample {
        x: Var,
    },
    Maximum {
        a: Var,
        b: Var,
    },
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Reduce {
        x: Var,
        kind: ReduceKind,
        outer: usize,
        len: usize,
        inner: usize,
        argmax: Vec<usize>,
    },
    Sum {
        x: Var,
        mean: bool,
    },
}

impl Op {
    fn primitive(&self) -> Option<Primitive> {
        Some(match self {
            Op::Leaf => return None,
            Op::Binary { kind, .. } => match kind {
                BinaryKind::Add => Primitive::Add,
                BinaryKind::Sub => Primitive::Sub,
                BinaryKind::Mul => Primitive::Mul,
                BinaryKind::Div => Primitive::Div,
            },
            Op::Affine { .. } => Primitive::Affine,
            Op::MatMul { .. } => Primitive::MatMul,
            Op::Conv2d { .. } => Primitive::Conv2d,
            Op::Act { kind, .. } => match kind {
                ActKind::Relu => Primitive::Relu,
                ActKind::Sigmoid => Primitive::Sigmoid,
                ActKind::Gelu => Primitive::Gelu,
            },
            Op::Norm { batch: true, .. } => Primitive::BatchNorm,
            Op::Norm { batch: false, .. } => Primitive::LayerNorm,
            Op::Pool { kind: PoolKind::Max, .. } => Primitive::MaxPool,
            Op::Pool { kind: PoolKind::Avg, .. } => Primitive::AvgPool,
            Op::Softmax { .. } => Primitive::Softmax,
            Op::Reshape { .. } => Primitive::Reshape,
            Op::Gather { prim, .. } => *prim,
            Op::Concat { .. } => Primitive::Concat,
            Op::Upsample { .. } => Primitive::Upsample,
            Op::Maximum { .. } => Primitive::Maximum,
            Op::Clamp { .. } => Primitive::Clamp,
            Op::Reduce { .. } => Primitive::Reduce,
            Op::Sum { .. } => Primitive::Sum,
        })
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// topological order of the graph. A tape belongs to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<Primitive>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros when `v` did not influence the root.
    pub fn tensor(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient matches node shape"),
            None => Tensor::zeros(shape).expect("node shape is valid"),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Tape whose backward rule for `prim` is deliberately wrong (scaled by 1.5).
    /// Used to prove that the verification suites catch broken gradients.
    pub fn with_fault(prim: Primitive) -> Self {
        Tape {
            nodes: Vec::new(),
            fault: Some(prim),
        }
    }

    pub fn fault(&self) -> Option<Primitive> {
        self.fault
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, rg)
    }

    // ---- elementwise -----------------------------------------------------

    /// `a op b`, where `b` either matches `a` or broadcasts to it (numpy rules,
    /// but only `b` may be expanded).
    pub fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let ta = self.value(a);
        let tb = self.value(b);
        let bmap = if ta.shape() == tb.shape() {
            None
        } else {
            Some(broadcast_map(ta.shape(), tb.shape())?)
        };
        let bidx = |i: usize| bmap.as_ref().map_or(i, |m| m[i]);
        if kind == BinaryKind::Div {
            if let Some(bad) = tb.data().iter().find(|v| v.abs() < 1e-12) {
                return Err(Error::Domain(format!("division by near-zero value {bad:e}")));
            }
        }
        let (ad, bd) = (ta.data(), tb.data());
        let data: Vec<f64> = (0..ad.len())
            .map(|i| {
                let (x, y) = (ad[i], bd[bidx(i)]);
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                }
            })
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(value, Op::Binary { a, b, kind, bmap }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Div)
    }

    /// `mul·a + add`.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let value = self.value(a).map(|v| mul * v + add);
        self.push(value, Op::Affine { a, mul }, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.affine(a, c, 0.0)
    }

    pub fn act(&mut self, a: Var, kind: ActKind) -> Var {
        let value = self.value(a).map(|x| match kind {
            ActKind::Relu => x.max(0.0),
            ActKind::Sigmoid => sigmoid(x),
            ActKind::Gelu => gelu(x).0,
        });
        self.push(value, Op::Act { a, kind }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.act(a, ActKind::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.act(a, ActKind::Sigmoid)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.act(a, ActKind::Gelu)
    }

    /// Elementwise maximum; ties go to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| if x >= y { x } else { y })?;
        Ok(self.push(value, Op::Maximum { a, b }, &[a, b]))
    }

    /// Gradient passes where `lo ≤ x ≤ hi`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(value, Op::Clamp { x, lo, hi }, &[x])
    }

    // ---- linear algebra --------------------------------------------------

    /// `[m×k]·[k×n]`, or batched `[B×m×k]·[B×k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, k2, n) = match (&sa[..], &sb[..]) {
            ([m, k], [k2, n]) => (1, *m, *k, *k2, *n),
            ([b1, m, k], [b2, k2, n]) if b1 == b2 => (*b1, *m, *k, *k2, *n),
            _ => {
                return Err(Error::dim(format!(
                    "matmul needs matching 2-D or batched 3-D operands, got {sa:?} and {sb:?}"
                )))
            }
        };
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions differ: {sa:?} · {sb:?}"
            )));
        }
        let mut out = vec![0.0; batch * m * n];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                gemm_acc(
                    &ad[i * m * k..(i + 1) * m * k],
                    &bd[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b, batch, m, k, n }, &[a, b]))
    }

    /// `x·w + bias` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let fan_in = *shape.last().unwrap();
        let rows = self.value(x).numel() / fan_in;
        let out_dim = match self.shape(w) {
            [i, o] if *i == fan_in => *o,
            s => {
                return Err(Error::dim(format!(
                    "linear weight {s:?} does not accept {fan_in} inputs"
                )))
            }
        };
        let flat = self.reshape(x, &[rows, fan_in])?;
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = bias {
            y = self.add(y, b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = out_dim;
        self.reshape(y, &out_shape)
    }

    // ---- convolution and pooling -----------------------------------------

    /// Cross-correlation of `x[N,C,H,W]` with `w[F,C,kh,kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (f, wc, kh, kw) = self.value(w).dims4()?;
        if wc != c {
            return Err(Error::dim(format!(
                "conv weight expects {wc} input channels, input has {c}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::dim(format!("conv kernel {kh}x{kw} must be odd")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [f] {
                return Err(Error::dim(format!(
                    "conv bias {:?} does not match {f} filters",
                    self.shape(b)
                )));
            }
        }
        let oh = out_extent(h, kh, stride, pad)?;
        let ow = out_extent(wd, kw, stride, pad)?;
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        };
        let (rows, ncol) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![0.0; n * f * ncol];
        let mut cols = vec![0.0; rows * ncol];
        {
            let xd = self.value(x).data();
            let wdata = self.value(w).data();
            let bdata = bias.map(|b| self.value(b).data());
            for i in 0..n {
                im2col(&xd[i * c * h * wd..(i + 1) * c * h * wd], &geom, &mut cols);
                let o = &mut out[i * f * ncol..(i + 1) * f * ncol];
                if let Some(bd) = bdata {
                    for (fi, chunk) in o.chunks_mut(ncol).enumerate() {
                        chunk.fill(bd[fi]);
                    }
                }
                gemm_acc(wdata, &cols, o, f, rows, ncol);
            }
        }
        let value = Tensor::new(&[n, f, oh, ow], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                bias,
                geom,
                batch: n,
                filters: f,
            },
            &inputs,
        ))
    }

    /// Max or average pooling. Padding never contributes: max ignores it and
    /// the average divides by the number of in-image taps.
    pub fn pool2d(
        &mut self,
        x: Var,
        kind: PoolKind,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if k == 0 || stride == 0 {
            return Err(Error::dim("pool window and stride must be positive"));
        }
        if pad >= k {
            return Err(Error::dim(format!("pool padding {pad} must be below window {k}")));
        }
        let oh = out_extent(h, k, stride, pad)?;
        let ow = out_extent(w, k, stride, pad)?;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::new();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                let y0 = (oy * stride) as isize - pad as isize;
                for ox in 0..ow {
                    let x0 = (ox * stride) as isize - pad as isize;
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    for ky in 0..k as isize {
                        let iy = y0 + ky;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k as isize {
                            let ix = x0 + kx;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            let v = xd[idx];
                            if v > best || best_idx == usize::MAX {
                                best = v;
                                best_idx = idx;
                            }
                            sum += v;
                            count += 1;
                        }
                    }
                    if count == 0 {
                        return Err(Error::dim("pool window lies entirely in padding"));
                    }
                    match kind {
                        PoolKind::Max => {
                            out.push(best);
                            argmax.push(best_idx);
                        }
                        PoolKind::Avg => out.push(sum / count as f64),
                    }
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::Pool {
                x,
                kind,
                k,
                stride,
                pad,
                argmax,
            },
            &[x],
        ))
    }

    // ---- normalization ---------------------------------------------------

    /// Training-mode batch normalization over (N,H,W) for each channel.
    /// Also returns the batch mean and the unbiased batch variance per channel
    /// so callers can maintain running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        if eps <= 0.0 {
            return Err(Error::Contract("normalization eps must be positive".into()));
        }
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim(format!("batchnorm affine params must be [{c}]")));
        }
        let hw = h * w;
        let m = (n * hw) as f64;
        let xd = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (ch, mu) in mean.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..n {
                s += xd[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().sum::<f64>();
            }
            *mu = s / m;
        }
        for ch in 0..c {
            let mut s = 0.0;
            for i in 0..n {
                for v in &xd[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                    s += (v - mean[ch]) * (v - mean[ch]);
                }
            }
            var[ch] = s / m;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for i in 0..n {
            for ch in 0..c {
                for j in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                    xhat[j] = (xd[j] - mean[ch]) * inv_std[ch];
                    out[j] = gd[ch] * xhat[j] + bd[ch];
                }
            }
        }
        let unbiased: Vec<f64> = if m > 1.0 {
            var.iter().map(|v| v * m / (m - 1.0)).collect()
        } else {
            var.clone()
        };
        let value = Tensor::new(&[n, c, h, w], out)?;
        let v = self.push(
            value,
            Op::Norm {
                x,
                gamma,
                beta,
                batch: true,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        );
        Ok((v, mean, unbiased))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Contract("normalization eps must be positive".into()));
        }
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim(format!("layernorm affine params must be [{d}]")));
        }
        let xd = self.value(x).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xd.len() / d;
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mu) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = gd[j] * xh + bd[j];
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            Op::Norm {
                x,
                gamma,
                beta,
                batch: false,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    // ---- softmax and reductions ------------------------------------------

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis)?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mx = (0..len).map(|j| xd[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for j in 0..len {
                    let e = (xd[at(j)] - mx).exp();
                    out[at(j)] = e;
                    s += e;
                }
                for j in 0..len {
                    out[at(j)] /= s;
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            &[x],
        ))
    }

    /// Reduces `axis`, keeping it with extent 1. Max routes gradients to the
    /// first maximum.
    pub fn reduce(&mut self, x: Var, axis: usize, kind: ReduceKind) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis(&shape, axis)?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = Vec::new();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                out[o * inner + i] = match kind {
                    ReduceKind::Sum => (0..len).map(|j| xd[at(j)]).sum(),
                    ReduceKind::Mean => (0..len).map(|j| xd[at(j)]).sum::<f64>() / len as f64,
                    ReduceKind::Max => {
                        let mut best = at(0);
                        for j in 1..len {
                            if xd[at(j)] > xd[best] {
                                best = at(j);
                            }
                        }
                        argmax.push(best);
                        xd[best]
                    }
                };
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(
            value,
            Op::Reduce {
                x,
                kind,
                outer,
                len,
                inner,
                argmax,
            },
            &[x],
        ))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x, mean: false }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Sum { x, mean: true }, &[x])
    }

    // ---- shape manipulation ----------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim(format!("{perm:?} is not a permutation of {rank} axes")));
        }
        let in_strides = kernels::strides(&shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let numel = self.value(x).numel();
        let mut map = Vec::with_capacity(numel);
        let mut idx = vec![0usize; rank];
        for _ in 0..numel {
            map.push((0..rank).map(|i| idx[i] * in_strides[perm[i]]).sum());
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        self.gather(x, &out_shape, map, Primitive::Permute)
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, a: usize, b: usize) -> Result<Var> {
        let mut perm: Vec<usize> = (0..self.shape(x).len()).collect();
        if a >= perm.len() || b >= perm.len() {
            return Err(Error::dim("transpose axis out of range"));
        }
        perm.swap(a, b);
        self.permute(x, &perm)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, full, inner) = split_axis(&shape, axis)?;
        if len == 0 || start + len > full {
            return Err(Error::dim(format!(
                "slice [{start}, {}) exceeds axis {axis} of extent {full}",
                start + len
            )));
        }
        let mut map = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for j in start..start + len {
                for i in 0..inner {
                    map.push((o * full + j) * inner + i);
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.gather(x, &out_shape, map, Primitive::Slice)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.slice(x, 1, start, len)
    }

    /// Splits `x[N,C,H,W]` into non-overlapping `m×m` patches, giving
    /// `[N, (H/m)·(W/m), C·m·m]`. Patches are ordered row-major over the patch
    /// grid; each patch is flattened channel-major then row-major.
    pub fn patches(&mut self, x: Var, m: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if m == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Config(format!(
                "patch size {m} does not divide {h}x{w}"
            )));
        }
        let (gh, gw) = (h / m, w / m);
        let feat = c * m * m;
        let mut map = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for py in 0..gh {
                for px in 0..gw {
                    for ch in 0..c {
                        for iy in 0..m {
                            for ix in 0..m {
                                map.push(((b * c + ch) * h + py * m + iy) * w + px * m + ix);
                            }
                        }
                    }
                }
            }
        }
        self.gather(x, &[n, gh * gw, feat], map, Primitive::Patches)
    }

    fn gather(&mut self, x: Var, shape: &[usize], map: Vec<usize>, prim: Primitive) -> Result<Var> {
        let xd = self.value(x).data();
        let data = map.iter().map(|&i| xd[i]).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Gather { x, map, prim }, &[x]))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        let (outer, _, inner) = split_axis(&base, axis)?;
        let mut lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!(
                    "cannot concatenate {s:?} with {base:?} along axis {axis}"
                )));
            }
            lens.push(s[axis]);
        }
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&lens) {
                let d = self.value(p).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                inner,
                lens,
            },
            parts,
        ))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        for &p in parts {
            self.value(p).dims4()?;
        }
        self.concat(parts, 1)
    }

    /// Bilinear resize of `x[N,C,H,W]` with corner-aligned sampling grids, so
    /// the four corner pixels are reproduced exactly.
    pub fn upsample_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if oh == 0 || ow == 0 {
            return Err(Error::dim("resize target must be positive"));
        }
        let ys = bilinear_taps(h, oh);
        let xs = bilinear_taps(w, ow);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let p = &xd[plane * h * w..(plane + 1) * h * w];
            for &(y0, y1, fy) in &ys {
                for &(x0, x1, fx) in &xs {
                    let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                    let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                    out.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(value, Op::Upsample { x }, &[x]))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse-mode sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        self.backward_seeded(root, &[1.0])
    }

    /// Vector-Jacobian product: backpropagates `seed` (one entry per element
    /// of `root`).
    pub fn backward_seeded(&self, root: Var, seed: &[f64]) -> Result<Gradients> {
        if seed.len() != self.value(root).numel() {
            return Err(Error::dim(format!(
                "seed has {} entries, root has shape {:?}",
                seed.len(),
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed.to_vec());
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(mut g) = grads[id].take() else {
                continue;
            };
            if self.fault.is_some() && node.op.primitive() == self.fault {
                g.iter_mut().for_each(|v| *v *= 1.5);
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary { a, b, kind, bmap } => {
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                let bi = |i: usize| bmap.as_ref().map_or(i, |m| m[i]);
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += match kind {
                            BinaryKind::Add | BinaryKind::Sub => g[i],
                            BinaryKind::Mul => g[i] * bd[bi(i)],
                            BinaryKind::Div => g[i] / bd[bi(i)],
                        };
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for i in 0..g.len() {
                        let y = bd[bi(i)];
                        gb[bi(i)] += match kind {
                            BinaryKind::Add => g[i],
                            BinaryKind::Sub => -g[i],
                            BinaryKind::Mul => g[i] * ad[i],
                            BinaryKind::Div => -g[i] * ad[i] / (y * y),
                        };
                    }
                }
            }
            Op::Affine { a, mul } => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (d, &gi) in ga.iter_mut().zip(g) {
                        *d += mul * gi;
                    }
                }
            }
            Op::MatMul { a, b, batch, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..*batch {
                        gemm_acc_bt(
                            &g[i * m * n..(i + 1) * m * n],
                            &bd[i * k * n..(i + 1) * k * n],
                            &mut ga[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for i in 0..*batch {
                        gemm_acc_at(
                            &ad[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &mut gb[i * k * n..(i + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                bias,
                geom,
                batch,
                filters,
            } => {
                let f = *filters;
                let (rows, ncol) = (geom.col_rows(), geom.col_cols());
                let img = geom.c * geom.h * geom.w;
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                if let Some(b) = bias {
                    if let Some(gb) = self.slot(grads, *b) {
                        for i in 0..*batch {
                            for (fi, gbf) in gb.iter_mut().enumerate() {
                                let o = (i * f + fi) * ncol;
                                *gbf += g[o..o + ncol].iter().sum::<f64>();
                            }
                        }
                    }
                }
                let need_w = self.nodes[w.0].requires_grad;
                let need_x = self.nodes[x.0].requires_grad;
                let mut cols = vec![0.0; rows * ncol];
                let mut dcols = vec![0.0; rows * ncol];
                for i in 0..*batch {
                    let gi = &g[i * f * ncol..(i + 1) * f * ncol];
                    if need_w {
                        im2col(&xd[i * img..(i + 1) * img], geom, &mut cols);
                        let gw = self.slot(grads, *w).unwrap();
                        gemm_acc_bt(gi, &cols, gw, f, ncol, rows);
                    }
                    if need_x {
                        dcols.fill(0.0);
                        gemm_acc_at(wd, gi, &mut dcols, rows, f, ncol);
                        let gx = self.slot(grads, *x).unwrap();
                        col2im_acc(&dcols, geom, &mut gx[i * img..(i + 1) * img]);
                    }
                }
            }
            Op::Act { a, kind } => {
                let ad = self.value(*a).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i]
                            * match kind {
                                ActKind::Relu => {
                                    if ad[i] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                ActKind::Sigmoid => out[i] * (1.0 - out[i]),
                                ActKind::Gelu => gelu(ad[i]).1,
                            };
                    }
                }
            }
            Op::Norm {
                x,
                gamma,
                beta,
                batch,
                xhat,
                inv_std,
            } => {
                let gd = self.value(*gamma).data();
                // (group count, group length, element -> (group, param index))
                let shape = self.shape(*x);
                let (groups, members): (usize, Box<dyn Fn(usize) -> (usize, usize)>) = if *batch {
                    let (_, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                    let hw = h * w;
                    (c, Box::new(move |j| ((j / hw) % c, (j / hw) % c)))
                } else {
                    let d = *shape.last().unwrap();
                    (g.len() / d, Box::new(move |j| (j / d, j % d)))
                };
                let mut sum_g = vec![0.0; groups];
                let mut sum_gx = vec![0.0; groups];
                let mut count = vec![0usize; groups];
                let mut dgamma = vec![0.0; gd.len()];
                let mut dbeta = vec![0.0; gd.len()];
                for j in 0..g.len() {
                    let (grp, pi) = members(j);
                    let gy = g[j] * gd[pi];
                    sum_g[grp] += gy;
                    sum_gx[grp] += gy * xhat[j];
                    count[grp] += 1;
                    dgamma[pi] += g[j] * xhat[j];
                    dbeta[pi] += g[j];
                }
                if let Some(gx) = self.slot(grads, *x) {
                    for j in 0..g.len() {
                        let (grp, pi) = members(j);
                        let m = count[grp] as f64;
                        gx[j] += inv_std[grp]
                            * (g[j] * gd[pi] - sum_g[grp] / m - xhat[j] * sum_gx[grp] / m);
                    }
                }
                if let Some(gg) = self.slot(grads, *gamma) {
                    gg.iter_mut().zip(&dgamma).for_each(|(a, b)| *a += b);
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    gb.iter_mut().zip(&dbeta).for_each(|(a, b)| *a += b);
                }
            }
            Op::Pool {
                x,
                kind,
                k,
                stride,
                pad,
                argmax,
            } => {
                let (_, _, h, w) = self.value(*x).dims4().unwrap();
                let (_, _, oh, ow) = node.value.dims4().unwrap();
                let Some(gx) = self.slot(grads, *x) else {
                    return;
                };
                match kind {
                    PoolKind::Max => {
                        for (i, &src) in argmax.iter().enumerate() {
                            gx[src] += g[i];
                        }
                    }
                    PoolKind::Avg => {
                        let planes = g.len() / (oh * ow);
                        for plane in 0..planes {
                            let base = plane * h * w;
                            for oy in 0..oh {
                                let y0 = (oy * stride) as isize - *pad as isize;
                                let ylo = y0.max(0) as usize;
                                let yhi = ((y0 + *k as isize).min(h as isize)) as usize;
                                for ox in 0..ow {
                                    let x0 = (ox * stride) as isize - *pad as isize;
                                    let xlo = x0.max(0) as usize;
                                    let xhi = ((x0 + *k as isize).min(w as isize)) as usize;
                                    let cnt = ((yhi - ylo) * (xhi - xlo)) as f64;
                                    let share = g[(plane * oh + oy) * ow + ox] / cnt;
                                    for iy in ylo..yhi {
                                        for ix in xlo..xhi {
                                            gx[base + iy * w + ix] += share;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let Some(gx) = self.slot(grads, *x) else {
                    return;
                };
                for o in 0..*outer {
                    for i in 0..*inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..*len).map(|j| g[at(j)] * out[at(j)]).sum();
                        for j in 0..*len {
                            gx[at(j)] += out[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(gx) = self.slot(grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            Op::Gather { x, map, .. } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (&src, &gi) in map.iter().zip(g) {
                        gx[src] += gi;
                    }
                }
            }
            Op::Concat {
                parts,
                outer,
                inner,
                lens,
            } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                for (&p, &len) in parts.iter().zip(lens) {
                    if let Some(gp) = self.slot(grads, p) {
                        for o in 0..*outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut gp[o * len * inner..(o + 1) * len * inner];
                            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    }
                    offset += len;
                }
            }
            Op::Upsample { x } => {
                let (_, _, h, w) = self.value(*x).dims4().unwrap();
                let (_, _, oh, ow) = node.value.dims4().unwrap();
                let Some(gx) = self.slot(grads, *x) else {
                    return;
                };
                let ys = bilinear_taps(h, oh);
                let xs = bilinear_taps(w, ow);
                let planes = g.len() / (oh * ow);
                for plane in 0..planes {
                    let p = &mut gx[plane * h * w..(plane + 1) * h * w];
                    let gp = &g[plane * oh * ow..(plane + 1) * oh * ow];
                    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                            let gv = gp[oy * ow + ox];
                            p[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                            p[y0 * w + x1] += gv * (1.0 - fy) * fx;
                            p[y1 * w + x0] += gv * fy * (1.0 - fx);
                            p[y1 * w + x1] += gv * fy * fx;
                        }
                    }
                }
            }
            Op::Maximum { a, b } => {
                let ad = self.value(*a).data();
                let bd = self.value(*b).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..g.len() {
                        if ad[i] >= bd[i] {
                            ga[i] += g[i];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for i in 0..g.len() {
                        if ad[i] < bd[i] {
                            gb[i] += g[i];
                        }
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xd = self.value(*x).data();
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..g.len() {
                        if xd[i] >= *lo && xd[i] <= *hi {
                            gx[i] += g[i];
                        }
                    }
                }
            }
            Op::Reduce {
                x,
                kind,
                outer,
                len,
                inner,
                argmax,
            } => {
                let Some(gx) = self.slot(grads, *x) else {
                    return;
                };
                for o in 0..*outer {
                    for i in 0..*inner {
                        let gi = g[o * inner + i];
                        match kind {
                            ReduceKind::Sum | ReduceKind::Mean => {
                                let s = if *kind == ReduceKind::Mean {
                                    gi / *len as f64
                                } else {
                                    gi
                                };
                                for j in 0..*len {
                                    gx[(o * len + j) * inner + i] += s;
                                }
                            }
                            ReduceKind::Max => gx[argmax[o * inner + i]] += gi,
                        }
                    }
                }
            }
            Op::Sum { x, mean } => {
                if let Some(gx) = self.slot(grads, *x) {
                    let s = if *mean { g[0] / gx.len() as f64 } else { g[0] };
                    gx.iter_mut().for_each(|v| *v += s);
                }
            }
        }
    }

    /// Gradient buffer for `v`, allocated on first use; `None` for constants.
    #[allow(clippy::mut_from_ref)]
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
    }
}

fn out_extent(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::dim("stride must be positive"));
    }
    let padded = size + 2 * pad;
    if padded < k {
        return Err(Error::dim(format!(
            "window {k} does not fit extent {size} with padding {pad}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// (outer, axis extent, inner) for iterating over one axis of a row-major tensor.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim(format!("axis {axis} out of range for {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

fn broadcast_map(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if b.len() > a.len() {
        return Err(Error::dim(format!("cannot broadcast {b:?} onto {a:?}")));
    }
    let mut padded = vec![1; a.len() - b.len()];
    padded.extend_from_slice(b);
    for (&x, &y) in a.iter().zip(&padded) {
        if y != x && y != 1 {
            return Err(Error::dim(format!("cannot broadcast {b:?} onto {a:?}")));
        }
    }
    let bs = kernels::strides(&padded);
    let eff: Vec<usize> = padded
        .iter()
        .zip(&bs)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let numel: usize = a.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; a.len()];
    for _ in 0..numel {
        map.push(idx.iter().zip(&eff).map(|(i, s)| i * s).sum());
        for d in (0..a.len()).rev() {
            idx[d] += 1;
            if idx[d] < a[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(map)
}

/// Source taps `(lo, hi, frac)` for corner-aligned linear resampling.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|o| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = o as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// GELU (tanh form) and its derivative.
fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}
