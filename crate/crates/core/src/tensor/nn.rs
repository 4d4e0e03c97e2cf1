//! Layers: initialization schemes, linear maps, batch normalization and small MLPs.

use std::cell::RefCell;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{BackwardCtx, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; every row is processed independently.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    KaimingNormal {
        fan_in: usize,
    },
    Zeros,
    Constant(f64),
}

impl InitScheme {
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<f64> {
        match *self {
            InitScheme::KaimingNormal { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| normal.sample(rng)).collect()
            }
            InitScheme::Zeros => vec![0.0; n],
            InitScheme::Constant(v) => vec![v; n],
        }
    }
}

/// `y = x·W (+ b)` with `W: [in×out]`.
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, bias: bool, rng: &mut Rng) -> Self {
        let w = InitScheme::KaimingNormal { fan_in: d_in }.sample(d_in * d_out, rng);
        Self {
            weight: Tensor::param(vec![d_in, d_out], w).expect("shape matches"),
            bias: bias.then(|| Tensor::param(vec![d_out], vec![0.0; d_out]).expect("shape matches")),
        }
    }

    pub fn from_weights(weight: Tensor, bias: Option<Tensor>) -> Self {
        Self { weight, bias }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add_row(b),
            None => Ok(y),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        std::iter::once(self.weight.clone()).chain(self.bias.clone()).collect()
    }
}

/// Running statistics of a [`BatchNorm`].
#[derive(Debug, Clone, PartialEq)]
pub struct BnState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Per-feature normalization over the row axis with learnable scale and shift.
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub state: RefCell<BnState>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Tensor::param(vec![d], vec![1.0; d]).expect("shape"),
            beta: Tensor::param(vec![d], vec![0.0; d]).expect("shape"),
            state: RefCell::new(BnState {
                running_mean: vec![0.0; d],
                running_var: vec![1.0; d],
            }),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.numel()
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        vec![self.gamma.clone(), self.beta.clone()]
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.forward_with(x, mode, true)
    }

    /// `update_stats = false` normalizes with batch statistics in training mode
    /// without touching the running averages.
    pub fn forward_with(&self, x: &Tensor, mode: Mode, update_stats: bool) -> Result<Tensor> {
        let d = self.dim();
        if x.cols() != d {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                lhs: x.shape().to_vec(),
                rhs: vec![d],
            });
        }
        let m = x.rows();
        if m == 0 {
            return Err(Error::EmptyBatch);
        }

        let (mean, var) = match mode {
            Mode::Train => {
                let xs = x.data();
                let mut mean = vec![0.0; d];
                for row in xs.chunks_exact(d) {
                    mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                mean.iter_mut().for_each(|a| *a /= m as f64);
                let mut var = vec![0.0; d];
                for row in xs.chunks_exact(d) {
                    for j in 0..d {
                        let c = row[j] - mean[j];
                        var[j] += c * c;
                    }
                }
                var.iter_mut().for_each(|a| *a /= m as f64);
                if update_stats {
                    let mut st = self.state.borrow_mut();
                    let unbias = if m > 1 { m as f64 / (m - 1) as f64 } else { 1.0 };
                    for j in 0..d {
                        st.running_mean[j] = (1.0 - self.momentum) * st.running_mean[j] + self.momentum * mean[j];
                        st.running_var[j] = (1.0 - self.momentum) * st.running_var[j] + self.momentum * var[j] * unbias;
                    }
                }
                (mean, var)
            }
            Mode::Eval => {
                let st = self.state.borrow();
                (st.running_mean.clone(), st.running_var.clone())
            }
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let gamma = self.gamma.to_vec();
        let beta = self.beta.to_vec();
        let mut xhat = x.to_vec();
        let mut out = vec![0.0; xhat.len()];
        for (hrow, orow) in xhat.chunks_exact_mut(d).zip(out.chunks_exact_mut(d)) {
            for j in 0..d {
                let h = (hrow[j] - mean[j]) * inv_std[j];
                hrow[j] = h;
                orow[j] = gamma[j] * h + beta[j];
            }
        }

        let batch_stats = mode == Mode::Train;
        Ok(Tensor::from_op(
            x.shape().to_vec(),
            out,
            vec![x.clone(), self.gamma.clone(), self.beta.clone()],
            Box::new(move |ctx: &BackwardCtx<'_>| {
                let g = ctx.grad;
                let gamma = ctx.parents[1].data();
                let mut sum_g = vec![0.0; d];
                let mut sum_gx = vec![0.0; d];
                for (grow, hrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for j in 0..d {
                        sum_g[j] += grow[j];
                        sum_gx[j] += grow[j] * hrow[j];
                    }
                }
                let gx = ctx.parents[0].requires_grad().then(|| {
                    let mf = m as f64;
                    let scale: Vec<f64> = (0..d).map(|j| gamma[j] * inv_std[j]).collect();
                    let mut gx = vec![0.0; g.len()];
                    for ((xrow, grow), hrow) in gx.chunks_exact_mut(d).zip(g.chunks_exact(d)).zip(xhat.chunks_exact(d))
                    {
                        for j in 0..d {
                            xrow[j] = if batch_stats {
                                scale[j] * (grow[j] - sum_g[j] / mf - hrow[j] * sum_gx[j] / mf)
                            } else {
                                scale[j] * grow[j]
                            };
                        }
                    }
                    gx
                });
                vec![gx, Some(sum_gx), Some(sum_g)]
            }),
        ))
    }
}

/// Fully connected network `widths[0] → … → widths[last]` with
/// BatchNorm + Mish after every layer but the last.
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub norms: Vec<BatchNorm>,
}

impl Mlp {
    pub fn new(widths: &[usize], rng: &mut Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers: Vec<Linear> = widths.windows(2).map(|w| Linear::new(w[0], w[1], true, rng)).collect();
        let norms = widths[1..widths.len() - 1].iter().map(|&w| BatchNorm::new(w)).collect();
        Self { layers, norms }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].d_in()];
        w.extend(self.layers.iter().map(Linear::d_out));
        w
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = self.norms[i].forward(&h, mode)?.mish();
            }
        }
        Ok(h)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p: Vec<Tensor> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            p.extend(layer.parameters());
            if let Some(bn) = self.norms.get(i) {
                p.extend(bn.parameters());
            }
        }
        p
    }

    /// Parameters and running statistics by name, for checkpoints.
    pub fn named_state(&self, prefix: &str) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), layer.weight.to_vec()));
            if let Some(b) = &layer.bias {
                out.push((format!("{prefix}.{i}.bias"), b.to_vec()));
            }
            if let Some(bn) = self.norms.get(i) {
                let st = bn.state.borrow();
                out.push((format!("{prefix}.{i}.bn.gamma"), bn.gamma.to_vec()));
                out.push((format!("{prefix}.{i}.bn.beta"), bn.beta.to_vec()));
                out.push((format!("{prefix}.{i}.bn.running_mean"), st.running_mean.clone()));
                out.push((format!("{prefix}.{i}.bn.running_var"), st.running_var.clone()));
            }
        }
        out
    }

    pub fn load_named_state(&self, prefix: &str, lookup: &dyn Fn(&str) -> Option<Vec<f64>>) -> Result<()> {
        let get = |name: String| lookup(&name).ok_or_else(|| Error::Config(format!("checkpoint is missing '{name}'")));
        for (i, layer) in self.layers.iter().enumerate() {
            layer.weight.set_data(&get(format!("{prefix}.{i}.weight"))?)?;
            if let Some(b) = &layer.bias {
                b.set_data(&get(format!("{prefix}.{i}.bias"))?)?;
            }
            if let Some(bn) = self.norms.get(i) {
                bn.gamma.set_data(&get(format!("{prefix}.{i}.bn.gamma"))?)?;
                bn.beta.set_data(&get(format!("{prefix}.{i}.bn.beta"))?)?;
                let mean = get(format!("{prefix}.{i}.bn.running_mean"))?;
                let var = get(format!("{prefix}.{i}.bn.running_var"))?;
                if mean.len() != bn.dim() || var.len() != bn.dim() {
                    return Err(Error::LengthMismatch(bn.dim(), mean.len()));
                }
                *bn.state.borrow_mut() = BnState {
                    running_mean: mean,
                    running_var: var,
                };
            }
        }
        Ok(())
    }
}

/// Standard normal samples.
pub fn randn(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}
