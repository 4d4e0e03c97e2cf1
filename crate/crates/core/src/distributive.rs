//! Binary operators `ψ` with `ψ(c, ⨁ xᵢ) = ⨁ ψ(c, xᵢ)` for an augmented
//! f-mean `⨁` with `β = 0`.
//!
//! `ψ(a, b) = f⁻¹(f(a)·f(b))` works for any `α`; when `α = β = 0`,
//! `ψ(a, b) = f⁻¹(f(a) + f(b))` works as well.

use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::aggregators::{SegmentedSet, StandardAggregator};
use crate::error::{Error, Result};
use crate::genagg::{afm_forward, symbolic_params_for, AfmFunction, AfmParams, LimitCase, SymbolicF};
use crate::rng::{self, Rng};
use crate::tensor::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistKind {
    Multiplicative,
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistOperator {
    pub kind: DistKind,
    pub f: SymbolicF,
}

impl DistOperator {
    pub fn multiplicative(f: SymbolicF) -> Self {
        Self {
            kind: DistKind::Multiplicative,
            f,
        }
    }

    pub fn additive(f: SymbolicF) -> Self {
        Self {
            kind: DistKind::Additive,
            f,
        }
    }
}

impl fmt::Display for DistOperator {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let f = self.f;
        match self.kind {
            DistKind::Multiplicative => write!(out, "f⁻¹(f(a)·f(b)), f = {f}"),
            DistKind::Additive => write!(out, "f⁻¹(f(a)+f(b)), f = {f}"),
        }
    }
}

pub fn psi_apply(op: DistOperator, a: f64, b: f64) -> Result<f64> {
    let (fa, fb) = (op.f.eval(a), op.f.eval(b));
    let y = match op.kind {
        DistKind::Multiplicative => op.f.inverse(fa * fb),
        DistKind::Additive => op.f.inverse(fa + fb),
    };
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::NonFinite {
            context: format!("ψ[{op}]({a}, {b})"),
        })
    }
}

fn afm_scalar(params: &AfmParams, xs: &[f64]) -> Result<f64> {
    let s = SegmentedSet::from_scalar_groups(&[xs.to_vec()])?;
    Ok(afm_forward(params, &s, Mode::Eval)?.item())
}

fn gdp_residual(params: &AfmParams, op: DistOperator, c: f64, xs: &[f64]) -> Result<f64> {
    let lhs = psi_apply(op, c, afm_scalar(params, xs)?)?;
    let mapped = xs.iter().map(|&x| psi_apply(op, c, x)).collect::<Result<Vec<_>>>()?;
    let rhs = afm_scalar(params, &mapped)?;
    Ok((lhs - rhs).abs() / lhs.abs().max(1.0))
}

/// `|ψ(c, ⨁xs) − ⨁ψ(c, xs)| / max(1, |lhs|)`.
pub fn check_gdp(params: &AfmParams, op: DistOperator, c: f64, xs: &[f64]) -> Result<f64> {
    let (alpha, beta) = (params.alpha(), params.beta());
    if beta != 0.0 {
        return Err(Error::GdpRequiresZeroBeta(beta));
    }
    if op.kind == DistKind::Additive && alpha != 0.0 {
        return Err(Error::AdditiveRequiresMeanForm { alpha, beta });
    }
    if xs.is_empty() {
        return Err(Error::EmptyNeighbourhood(0));
    }
    gdp_residual(params, op, c, xs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psi {
    Operator(DistOperator),
    Limit(LimitCase),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatalogEntry {
    pub aggregator: StandardAggregator,
    pub psi: Psi,
    pub label: &'static str,
}

impl CatalogEntry {
    /// The listed closed form evaluated directly.
    pub fn closed_form(&self, a: f64, b: f64) -> f64 {
        match self.label {
            "a+b" => a + b,
            "a·b" => a * b,
            "|a|·|b|" => a.abs() * b.abs(),
            "|a|^{log|b|}" => a.abs().powf(b.abs().ln()),
            "ab/(a+b)" => a * b / (a + b),
            "√(a²+b²)" => (a * a + b * b).sqrt(),
            "min(|a|,|b|)" => a.abs().min(b.abs()),
            "max(|a|,|b|)" => a.abs().max(b.abs()),
            "min(a,b)" => a.min(b),
            "max(a,b)" => a.max(b),
            other => unreachable!("no closed form for {other}"),
        }
    }

    pub fn psi(&self, a: f64, b: f64) -> Result<f64> {
        match self.psi {
            Psi::Operator(op) => psi_apply(op, a, b),
            Psi::Limit(_) => Ok(self.closed_form(a, b)),
        }
    }

    /// Whether the row only holds (or is only stable) on positive inputs.
    /// The centred row needs it because `|a|·|b|` discards signs before the
    /// mean is subtracted.
    pub fn positive_domain(&self) -> bool {
        self.aggregator == StandardAggregator::StandardDeviation
            || matches!(
                self.psi,
                Psi::Operator(DistOperator {
                    f: SymbolicF::Reciprocal,
                    ..
                })
            )
    }
}

/// One entry per listed `ψ` of every standard aggregator.
pub fn distributive_catalog() -> Vec<CatalogEntry> {
    use DistOperator as D;
    use StandardAggregator as A;
    use SymbolicF as F;
    let op = |aggregator, psi, label| CatalogEntry {
        aggregator,
        psi: Psi::Operator(psi),
        label,
    };
    let lim = |aggregator, case, label| CatalogEntry {
        aggregator,
        psi: Psi::Limit(case),
        label,
    };
    vec![
        op(A::Mean, D::additive(F::Identity), "a+b"),
        op(A::Mean, D::multiplicative(F::Identity), "a·b"),
        op(A::Sum, D::multiplicative(F::Identity), "a·b"),
        op(A::Product, D::multiplicative(F::LogAbs), "|a|^{log|b|}"),
        lim(A::MinMagnitude, LimitCase::MinMag, "min(|a|,|b|)"),
        lim(A::MaxMagnitude, LimitCase::MaxMag, "max(|a|,|b|)"),
        lim(A::Min, LimitCase::Min, "min(a,b)"),
        lim(A::Max, LimitCase::Max, "max(a,b)"),
        op(A::HarmonicMean, D::additive(F::Reciprocal), "ab/(a+b)"),
        op(A::HarmonicMean, D::multiplicative(F::Reciprocal), "a·b"),
        op(A::GeometricMean, D::additive(F::LogAbs), "|a|·|b|"),
        op(A::GeometricMean, D::multiplicative(F::LogAbs), "|a|^{log|b|}"),
        op(A::RootMeanSquare, D::additive(F::Square), "√(a²+b²)"),
        op(A::RootMeanSquare, D::multiplicative(F::Square), "|a|·|b|"),
        op(A::EuclideanNorm, D::multiplicative(F::Square), "|a|·|b|"),
        op(A::StandardDeviation, D::multiplicative(F::Square), "|a|·|b|"),
        op(A::LogSumExp, D::multiplicative(F::Exp), "a+b"),
    ]
}

pub const GDP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GdpRow {
    pub aggregator: StandardAggregator,
    pub label: String,
    /// Worst `check_gdp` residual over the probes.
    pub max_residual: f64,
    /// Worst relative gap between `ψ` built from `f` and the listed closed form.
    pub max_label_error: f64,
    pub probes: usize,
    pub passed: bool,
}

/// Log-uniform magnitude in `[1e-2, 1e2]` with a random sign unless
/// `positive`.
pub fn gdp_probe_value(rng: &mut Rng, positive: bool) -> f64 {
    let m = 10f64.powf(rng.gen_range(-2.0..=2.0));
    if positive || rng.gen_bool(0.5) {
        m
    } else {
        -m
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-9)
}

/// Checks one catalog row over `probes` random `(c, xs)` draws. Limit rows use
/// integer inputs and exact comparison.
pub fn verify_entry(entry: &CatalogEntry, probes: usize, seed: u64) -> Result<GdpRow> {
    let mut rng = rng::stream(seed, rng::STREAM_PROBES);
    let positive = entry.positive_domain();
    let mut max_residual: f64 = 0.0;
    let mut max_label_error: f64 = 0.0;
    for _ in 0..probes {
        let n = rng.gen_range(1..=8);
        match entry.psi {
            Psi::Limit(case) => {
                let c = rng.gen_range(-20i32..=20) as f64;
                let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-20i32..=20) as f64).collect();
                let params = AfmParams::limit(case);
                let lhs = entry.psi(c, afm_scalar(&params, &xs)?)?;
                let mapped = xs.iter().map(|&x| entry.psi(c, x)).collect::<Result<Vec<_>>>()?;
                let rhs = afm_scalar(&params, &mapped)?;
                if lhs != rhs {
                    max_residual = max_residual.max((lhs - rhs).abs().max(f64::MIN_POSITIVE));
                }
            }
            Psi::Operator(op) => {
                let c = gdp_probe_value(&mut rng, positive);
                let xs: Vec<f64> = (0..n).map(|_| gdp_probe_value(&mut rng, positive)).collect();
                let params = symbolic_params_for(entry.aggregator);
                // centred rows fall outside check_gdp; the identity is still
                // checked on the same probes
                let r = if params.beta() == 0.0 {
                    check_gdp(&params, op, c, &xs)?
                } else {
                    gdp_residual(&params, op, c, &xs)?
                };
                max_residual = max_residual.max(r);
                let b = xs[0];
                max_label_error = max_label_error.max(rel(psi_apply(op, c, b)?, entry.closed_form(c, b)));
            }
        }
    }
    let passed = max_residual < GDP_TOLERANCE && max_label_error < GDP_TOLERANCE;
    Ok(GdpRow {
        aggregator: entry.aggregator,
        label: entry.label.to_string(),
        max_residual,
        max_label_error,
        probes,
        passed,
    })
}

pub fn verify_catalog(probes: usize, seed: u64) -> Result<Vec<GdpRow>> {
    distributive_catalog()
        .iter()
        .enumerate()
        .map(|(i, e)| verify_entry(e, probes, rng::split(seed, i as u64)))
        .collect()
}

/// Human-readable `f` of a catalog row.
pub fn entry_function_label(entry: &CatalogEntry) -> String {
    match entry.psi {
        Psi::Operator(op) => op.to_string(),
        Psi::Limit(case) => AfmFunction::Limit(case).to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_examples() {
        let sq = DistOperator::multiplicative(SymbolicF::Square);
        assert!((psi_apply(sq, 2.0, 3.0).unwrap() - 6.0).abs() < 1e-12);
        let ex = DistOperator::multiplicative(SymbolicF::Exp);
        assert!((psi_apply(ex, 1.0, 2.0).unwrap() - 3.0).abs() < 1e-12);
        let id = DistOperator::additive(SymbolicF::Identity);
        assert_eq!(psi_apply(id, 1.0, 2.0).unwrap(), 3.0);
    }

    #[test]
    fn psi_overflow_is_reported() {
        let ex = DistOperator::multiplicative(SymbolicF::Exp);
        let err = psi_apply(ex, 1e3, 1e3).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn gdp_examples() {
        let norm = symbolic_params_for(StandardAggregator::EuclideanNorm);
        let op = DistOperator::multiplicative(SymbolicF::Square);
        assert!(check_gdp(&norm, op, 2.0, &[3.0, 4.0]).unwrap() < 1e-12);

        let mean = symbolic_params_for(StandardAggregator::Mean);
        let op = DistOperator::additive(SymbolicF::Identity);
        assert!(check_gdp(&mean, op, 7.0, &[1.0, 3.0]).unwrap() < 1e-12);

        let harm = symbolic_params_for(StandardAggregator::HarmonicMean);
        let op = DistOperator::multiplicative(SymbolicF::Reciprocal);
        assert!(check_gdp(&harm, op, 2.0, &[1.0, 4.0, 5.0]).unwrap() < 1e-12);
    }

    #[test]
    fn gdp_preconditions() {
        let std = symbolic_params_for(StandardAggregator::StandardDeviation);
        let op = DistOperator::multiplicative(SymbolicF::Square);
        assert!(matches!(
            check_gdp(&std, op, 2.0, &[1.0, 2.0]),
            Err(Error::GdpRequiresZeroBeta(_))
        ));
        let sum = symbolic_params_for(StandardAggregator::Sum);
        assert!(matches!(
            check_gdp(&sum, DistOperator::additive(SymbolicF::Identity), 1.0, &[1.0]),
            Err(Error::AdditiveRequiresMeanForm { .. })
        ));
    }

    #[test]
    fn catalog_labels() {
        let cat = distributive_catalog();
        let labels = |a| {
            cat.iter()
                .filter(|e| e.aggregator == a)
                .map(|e| e.label)
                .collect::<Vec<_>>()
        };
        assert_eq!(labels(StandardAggregator::Product), vec!["|a|^{log|b|}"]);
        assert_eq!(labels(StandardAggregator::Min), vec!["min(a,b)"]);
        assert_eq!(labels(StandardAggregator::RootMeanSquare), vec!["√(a²+b²)", "|a|·|b|"]);
        for a in StandardAggregator::ALL {
            assert!(!labels(a).is_empty(), "{a}");
        }
    }

    #[test]
    fn every_row_verifies() {
        for row in verify_catalog(200, 11).unwrap() {
            assert!(row.passed, "{row:?}");
        }
    }
}
