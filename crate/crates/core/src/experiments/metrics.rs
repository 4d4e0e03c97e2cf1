use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pearson correlation over the flattened entries.
pub fn pearson(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    pearson_slices(&pred.data(), &truth.data())
}

pub fn pearson_slices(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    let n = pred.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mp = pred.iter().sum::<f64>() / n as f64;
    let mt = truth.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if syy == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    if !sxy.is_finite() || !sxx.is_finite() || !syy.is_finite() {
        return Err(Error::NonFinite {
            context: "pearson".into(),
        });
    }
    if sxx == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean squared error as a differentiable scalar.
pub fn mse(pred: &Tensor, truth: &Tensor) -> Result<Tensor> {
    let d = pred.sub(truth)?;
    Ok(d.mul(&d)?.mean())
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}
