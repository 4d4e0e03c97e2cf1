use super::Tensor;
use crate::error::{Error, Result};

/// Compares the reverse-mode gradient of `f` at `point` with central
/// differences. Returns `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
pub fn finite_diff_check<F>(f: F, point: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let shape = point.shape().to_vec();
    let x0 = point.to_vec();
    let x = Tensor::param(shape.clone(), x0.clone())?;
    let y = f(&x)?;
    if y.numel() != 1 {
        return Err(Error::NonScalarLoss(y.shape().to_vec()));
    }
    y.backward()?;
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; x0.len()]);

    let mut worst: f64 = 0.0;
    let mut probe = x0.clone();
    for i in 0..x0.len() {
        probe[i] = x0[i] + eps;
        let up = f(&Tensor::new(shape.clone(), probe.clone())?)?.item();
        probe[i] = x0[i] - eps;
        let down = f(&Tensor::new(shape.clone(), probe.clone())?)?.item();
        probe[i] = x0[i];
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Same check for a loss closure over existing parameter tensors, which are
/// perturbed in place and restored. Any gradients already held by `params`
/// are cleared first.
pub fn finite_diff_check_params<F>(loss: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn() -> Result<Tensor>,
{
    params.iter().for_each(Tensor::clear_grad);
    let y = loss()?;
    if y.numel() != 1 {
        return Err(Error::NonScalarLoss(y.shape().to_vec()));
    }
    y.backward()?;
    drop(y);

    let mut worst: f64 = 0.0;
    for p in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let base = p.to_vec();
        let mut probe = base.clone();
        for i in 0..base.len() {
            probe[i] = base[i] + eps;
            p.set_data(&probe)?;
            let up = loss()?.item();
            probe[i] = base[i] - eps;
            p.set_data(&probe)?;
            let down = loss()?.item();
            probe[i] = base[i];
            p.set_data(&base)?;
            let numeric = (up - down) / (2.0 * eps);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
            worst = worst.max(err);
        }
    }
    params.iter().for_each(Tensor::clear_grad);
    Ok(worst)
}
