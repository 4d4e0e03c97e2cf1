use super::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators, one pair per parameter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

/// Adam over a fixed parameter list.
pub struct Adam {
    params: Vec<Tensor>,
    pub state: AdamState,
    pub lr: f64,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, lr: f64) -> Self {
        let state = AdamState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        };
        Self { params, state, lr }
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// One update; every parameter must hold a gradient. Gradients are zeroed
    /// afterwards.
    pub fn step(&mut self) -> Result<()> {
        adam_step(&self.params, &mut self.state, self.lr)
    }
}

pub fn adam_step(params: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != params.len() {
        state.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
    }
    let grads = params
        .iter()
        .enumerate()
        .map(|(index, p)| p.grad().ok_or(Error::MissingGrad { index }))
        .collect::<Result<Vec<_>>>()?;

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        p.update_data(|w| {
            for j in 0..w.len() {
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        });
        p.zero_grad();
    }
    Ok(())
}
