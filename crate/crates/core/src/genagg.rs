//! The augmented f-mean
//!
//! ```text
//! AFM_θ(X) = f⁻¹( n^(α−1) · Σᵢ f(xᵢ − β·μ) ),   θ = ⟨f, α, β⟩
//! ```
//!
//! where `μ` is the mean of the multiset and `n` its cardinality. `f` is either
//! a closed-form function ([`SymbolicF`]), a limit case evaluated as a direct
//! min/max ([`LimitCase`]), or a learnable pair of MLPs ([`MlpPair`]) trained
//! to be mutually inverse by [`inv_loss`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::aggregators::{Aggregated, Aggregator, SegmentedSet, StandardAggregator};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{randn, Mlp, Mode, ReduceKind, Tensor, STABILIZER};

/// Default widths of the learnable `f`; `f⁻¹` uses the reverse.
pub const DEFAULT_F_WIDTHS: [usize; 4] = [1, 2, 2, 4];

/// Closed-form invertible scalar functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SymbolicF {
    /// `x`
    Identity,
    /// `ln|x|`
    LogAbs,
    /// `1/x`
    Reciprocal,
    /// `x²`
    Square,
    /// `eˣ`
    Exp,
    /// `|x|^p`
    PowAbs(f64),
    /// `e^(p·x)`
    ExpScaled(f64),
}

impl SymbolicF {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SymbolicF::Identity => x,
            SymbolicF::LogAbs => x.abs().max(STABILIZER).ln(),
            SymbolicF::Reciprocal => 1.0 / stable(x),
            SymbolicF::Square => x * x,
            SymbolicF::Exp => x.exp(),
            SymbolicF::PowAbs(p) => x.abs().max(STABILIZER).powf(p),
            SymbolicF::ExpScaled(p) => (p * x).exp(),
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        match *self {
            SymbolicF::Identity => y,
            SymbolicF::LogAbs => y.exp(),
            SymbolicF::Reciprocal => 1.0 / stable(y),
            SymbolicF::Square => y.max(0.0).sqrt(),
            SymbolicF::Exp => y.abs().max(f64::MIN_POSITIVE).ln(),
            SymbolicF::PowAbs(p) => y.max(0.0).powf(1.0 / p),
            SymbolicF::ExpScaled(p) => y.abs().max(f64::MIN_POSITIVE).ln() / p,
        }
    }

    /// Whether `inverse(eval(x))` recovers `|x|` rather than `x`.
    pub fn magnitude_only(&self) -> bool {
        matches!(self, SymbolicF::LogAbs | SymbolicF::Square | SymbolicF::PowAbs(_))
    }

    /// `k` for `f = e^(kx)`.
    pub fn exp_rate(&self) -> Option<f64> {
        match *self {
            SymbolicF::Exp => Some(1.0),
            SymbolicF::ExpScaled(p) => Some(p),
            _ => None,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        match *self {
            SymbolicF::Identity => x.clone(),
            SymbolicF::LogAbs => x.log(),
            SymbolicF::Reciprocal => x.recip(),
            SymbolicF::Square => x.pow(2.0),
            SymbolicF::Exp => x.exp(),
            SymbolicF::PowAbs(p) => x.abs().clamp_min(STABILIZER).pow(p),
            SymbolicF::ExpScaled(p) => x.mul_scalar(p).exp(),
        }
    }

    pub fn inverse_tensor(&self, y: &Tensor) -> Tensor {
        match *self {
            SymbolicF::Identity => y.clone(),
            SymbolicF::LogAbs => y.exp(),
            SymbolicF::Reciprocal => y.recip(),
            SymbolicF::Square => y.sqrt(),
            SymbolicF::Exp => y.log(),
            SymbolicF::PowAbs(p) => y.clamp_min(0.0).pow(1.0 / p),
            SymbolicF::ExpScaled(p) => y.log().mul_scalar(1.0 / p),
        }
    }
}

impl fmt::Display for SymbolicF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymbolicF::Identity => write!(f, "x"),
            SymbolicF::LogAbs => write!(f, "log(|x|)"),
            SymbolicF::Reciprocal => write!(f, "1/x"),
            SymbolicF::Square => write!(f, "x^2"),
            SymbolicF::Exp => write!(f, "e^x"),
            SymbolicF::PowAbs(p) => write!(f, "|x|^{p}"),
            SymbolicF::ExpScaled(p) => write!(f, "e^({p}x)"),
        }
    }
}

fn stable(d: f64) -> f64 {
    if d.abs() >= STABILIZER {
        d
    } else if d < 0.0 {
        -STABILIZER
    } else {
        STABILIZER
    }
}

/// The `p → ∞` rows, evaluated as direct extrema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LimitCase {
    MinMag,
    MaxMag,
    Min,
    Max,
}

impl LimitCase {
    pub fn label(&self) -> &'static str {
        match self {
            LimitCase::MinMag => "lim_{p→∞} |x|^-p",
            LimitCase::MaxMag => "lim_{p→∞} |x|^p",
            LimitCase::Min => "lim_{p→∞} e^(-px)",
            LimitCase::Max => "lim_{p→∞} e^(px)",
        }
    }

    fn reduce(&self, s: &SegmentedSet) -> Result<Tensor> {
        let seg = &s.segments;
        match self {
            LimitCase::MinMag => s.values.abs().segment_reduce(seg, ReduceKind::Min),
            LimitCase::MaxMag => s.values.abs().segment_reduce(seg, ReduceKind::Max),
            LimitCase::Min => s.values.segment_reduce(seg, ReduceKind::Min),
            LimitCase::Max => s.values.segment_reduce(seg, ReduceKind::Max),
        }
    }
}

/// A learnable `f: ℝ → ℝᴰ` and `f⁻¹: ℝᴰ → ℝ`, applied to every scalar
/// independently.
pub struct MlpPair {
    pub f_net: Mlp,
    pub finv_net: Mlp,
}

impl MlpPair {
    pub fn new(f_widths: &[usize], rng: &mut Rng) -> Self {
        assert_eq!(f_widths.first(), Some(&1), "f maps scalars");
        let finv_widths: Vec<usize> = f_widths.iter().rev().copied().collect();
        Self {
            f_net: Mlp::new(f_widths, rng),
            finv_net: Mlp::new(&finv_widths, rng),
        }
    }

    pub fn with_default_widths(rng: &mut Rng) -> Self {
        Self::new(&DEFAULT_F_WIDTHS, rng)
    }

    /// Intermediate dimension `D`.
    pub fn dim(&self) -> usize {
        *self.f_net.widths().last().expect("nonempty")
    }

    /// `[k×1] → [k×D]`
    pub fn f(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.f_net.forward(x, mode)
    }

    /// `[k×D] → [k×1]`
    pub fn finv(&self, y: &Tensor, mode: Mode) -> Result<Tensor> {
        self.finv_net.forward(y, mode)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.f_net.parameters();
        p.extend(self.finv_net.parameters());
        p
    }
}

#[derive(Clone)]
pub enum AfmFunction {
    Symbolic(SymbolicF),
    Limit(LimitCase),
    Mlp(Rc<MlpPair>),
}

impl fmt::Debug for AfmFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AfmFunction::Symbolic(s) => write!(f, "Symbolic({s:?})"),
            AfmFunction::Limit(l) => write!(f, "Limit({l:?})"),
            AfmFunction::Mlp(p) => write!(f, "Mlp({:?})", p.f_net.widths()),
        }
    }
}

impl fmt::Display for AfmFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AfmFunction::Symbolic(s) => write!(f, "{s}"),
            AfmFunction::Limit(l) => f.write_str(l.label()),
            AfmFunction::Mlp(p) => write!(f, "mlp{:?}", p.f_net.widths()),
        }
    }
}

/// `θ = ⟨f, α, β⟩`. `α` and `β` are one-element tensors so they can be
/// trained.
#[derive(Debug, Clone)]
pub struct AfmParams {
    pub f: AfmFunction,
    pub alpha: Tensor,
    pub beta: Tensor,
}

impl AfmParams {
    pub fn symbolic(f: SymbolicF, alpha: f64, beta: f64) -> Self {
        Self {
            f: AfmFunction::Symbolic(f),
            alpha: Tensor::scalar(alpha),
            beta: Tensor::scalar(beta),
        }
    }

    pub fn limit(case: LimitCase) -> Self {
        Self {
            f: AfmFunction::Limit(case),
            alpha: Tensor::scalar(0.0),
            beta: Tensor::scalar(0.0),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.item()
    }

    pub fn beta(&self) -> f64 {
        self.beta.item()
    }

    pub fn label(&self) -> String {
        format!("⟨{}, {}, {}⟩", self.f, self.alpha(), self.beta())
    }
}

/// Table of ⟨f, α, β⟩ for every standard aggregator.
pub fn symbolic_params_for(agg: StandardAggregator) -> AfmParams {
    use StandardAggregator as A;
    match agg {
        A::Mean => AfmParams::symbolic(SymbolicF::Identity, 0.0, 0.0),
        A::Sum => AfmParams::symbolic(SymbolicF::Identity, 1.0, 0.0),
        A::Product => AfmParams::symbolic(SymbolicF::LogAbs, 1.0, 0.0),
        A::MinMagnitude => AfmParams::limit(LimitCase::MinMag),
        A::MaxMagnitude => AfmParams::limit(LimitCase::MaxMag),
        A::Min => AfmParams::limit(LimitCase::Min),
        A::Max => AfmParams::limit(LimitCase::Max),
        A::HarmonicMean => AfmParams::symbolic(SymbolicF::Reciprocal, 0.0, 0.0),
        A::GeometricMean => AfmParams::symbolic(SymbolicF::LogAbs, 0.0, 0.0),
        A::RootMeanSquare => AfmParams::symbolic(SymbolicF::Square, 0.0, 0.0),
        A::EuclideanNorm => AfmParams::symbolic(SymbolicF::Square, 1.0, 0.0),
        A::StandardDeviation => AfmParams::symbolic(SymbolicF::Square, 0.0, 1.0),
        A::LogSumExp => AfmParams::symbolic(SymbolicF::Exp, 1.0, 0.0),
    }
}

/// `n^(α−1)` per segment as an `[S×1]` column, computed as `exp((α−1)·ln n)`.
fn cardinality_scale(s: &SegmentedSet, alpha: &Tensor) -> Result<Tensor> {
    let ln_n: Vec<f64> = s.segments.counts().iter().map(|&c| (c as f64).ln()).collect();
    Ok(Tensor::column(&ln_n).mul(&alpha.add_scalar(-1.0))?.exp())
}

/// `x − β·μ` with `μ` the per-segment, per-feature mean.
fn centered(s: &SegmentedSet, beta: &Tensor) -> Result<Tensor> {
    if !beta.requires_grad() && beta.item() == 0.0 {
        return Ok(s.values.clone());
    }
    let mu = s
        .values
        .segment_reduce(&s.segments, ReduceKind::Mean)?
        .segment_expand(&s.segments)?;
    s.values.sub(&mu.mul(beta)?)
}

fn check_finite(t: &Tensor, params: &AfmParams) -> Result<()> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("augmented f-mean {}", params.label()),
        })
    }
}

/// `e^(kx)` rows shifted by the per-segment max so the sum neither
/// overflows nor underflows into the log stabilizer:
/// `f⁻¹(c·Σ e^(k(x−m))) + m`. The shift is detached; the result does not
/// depend on it.
fn exp_family_afm(f: SymbolicF, k: f64, x: &Tensor, s: &SegmentedSet, params: &AfmParams) -> Result<Tensor> {
    let shift = x
        .mul_scalar(k)
        .segment_reduce(&s.segments, ReduceKind::Max)?
        .mul_scalar(1.0 / k)
        .detach();
    let x = x.sub(&shift.segment_expand(&s.segments)?)?;
    let summed = f.forward(&x).segment_reduce(&s.segments, ReduceKind::Sum)?;
    let scaled = summed.mul_col(&cardinality_scale(s, &params.alpha)?)?;
    let out = f.inverse_tensor(&scaled).add(&shift)?;
    check_finite(&out, params)?;
    Ok(out)
}

/// Evaluates the augmented f-mean on every segment and feature.
pub fn afm_forward(params: &AfmParams, s: &SegmentedSet, mode: Mode) -> Result<Tensor> {
    let out = match &params.f {
        AfmFunction::Limit(case) => case.reduce(s)?,
        AfmFunction::Symbolic(f) => {
            let x = centered(s, &params.beta)?;
            if let Some(k) = f.exp_rate() {
                return exp_family_afm(*f, k, &x, s, params);
            }
            let summed = f.forward(&x).segment_reduce(&s.segments, ReduceKind::Sum)?;
            let scaled = summed.mul_col(&cardinality_scale(s, &params.alpha)?)?;
            f.inverse_tensor(&scaled)
        }
        AfmFunction::Mlp(pair) => mlp_afm(pair, &params.alpha, &params.beta, s, mode, None)?.0,
    };
    check_finite(&out, params)?;
    Ok(out)
}

/// MLP-mode pipeline. With `probes`, those extra scalars join the inputs of
/// `f` (and only the inverse objective), so both objectives see one
/// BatchNorm batch. Returns the aggregate and the inverse objective.
fn mlp_afm(
    pair: &MlpPair,
    alpha: &Tensor,
    beta: &Tensor,
    s: &SegmentedSet,
    mode: Mode,
    probes: Option<Vec<f64>>,
) -> Result<(Tensor, Tensor)> {
    let m = s.values.rows();
    let d = s.dim();
    let n_seg = s.n_segments();
    let dim = pair.dim();

    let flat = centered(s, beta)?.reshape(vec![m * d, 1])?;
    let f_in = match probes {
        Some(p) if !p.is_empty() => Tensor::concat_rows(&[flat, Tensor::column(&p)])?,
        _ => flat,
    };
    let k = f_in.rows();
    let fx = pair.f(&f_in, mode)?;

    // the sum and the n^(α−1) scaling act on each intermediate coordinate
    let summed = fx
        .slice_rows(0, m * d)?
        .reshape(vec![m, d * dim])?
        .segment_reduce(&s.segments, ReduceKind::Sum)?;
    let scaled = summed
        .mul_col(&cardinality_scale(s, alpha)?)?
        .reshape(vec![n_seg * d, dim])?;

    let y = pair.finv(&Tensor::concat_rows(&[scaled, fx])?, mode)?;
    let out = y.slice_rows(0, n_seg * d)?.reshape(vec![n_seg, d])?;
    let recon = y.slice_rows(n_seg * d, n_seg * d + k)?;
    let diff = recon.abs().sub(&f_in.abs())?;
    let inv = diff.mul(&diff)?.mean();
    Ok((out, inv))
}

/// `E[(|f⁻¹(f(x))| − |x|)²]` over the entries of `x`.
pub fn inv_loss(pair: &MlpPair, x: &Tensor, mode: Mode) -> Result<Tensor> {
    let flat = x.reshape(vec![x.numel(), 1])?;
    let recon = pair.finv(&pair.f(&flat, mode)?, mode)?;
    let diff = recon.abs().sub(&flat.abs())?;
    Ok(diff.mul(&diff)?.mean())
}

/// Learnable aggregator: an [`MlpPair`] with trainable `α` and `β`.
pub struct GenAgg {
    pub params: AfmParams,
    pair: Rc<MlpPair>,
    probe_rng: RefCell<Rng>,
    /// Add as many N(0,1) probes as there are inputs to the inverse objective
    /// during training.
    pub probes: bool,
}

impl GenAgg {
    /// `α = β = 0` (mean-like start).
    pub fn new(f_widths: &[usize], init_rng: &mut Rng, probe_rng: Rng) -> Self {
        let pair = Rc::new(MlpPair::new(f_widths, init_rng));
        Self {
            params: AfmParams {
                f: AfmFunction::Mlp(pair.clone()),
                alpha: Tensor::scalar_param(0.0),
                beta: Tensor::scalar_param(0.0),
            },
            pair,
            probe_rng: RefCell::new(probe_rng),
            probes: true,
        }
    }

    pub fn pair(&self) -> &MlpPair {
        &self.pair
    }

    pub fn alpha(&self) -> f64 {
        self.params.alpha()
    }

    pub fn beta(&self) -> f64 {
        self.params.beta()
    }

    /// Aggregate plus the inverse objective on the same inputs.
    pub fn forward_with_aux(&self, s: &SegmentedSet, mode: Mode) -> Result<(Tensor, Tensor)> {
        let probes =
            (self.probes && mode == Mode::Train).then(|| randn(s.values.numel(), &mut self.probe_rng.borrow_mut()));
        let (out, aux) = mlp_afm(&self.pair, &self.params.alpha, &self.params.beta, s, mode, probes)?;
        check_finite(&out, &self.params)?;
        Ok((out, aux))
    }

    pub fn to_checkpoint(&self, config_hash: &str) -> Checkpoint {
        let mut tensors = BTreeMap::new();
        for (name, v) in self.pair.f_net.named_state("f") {
            tensors.insert(name, v);
        }
        for (name, v) in self.pair.finv_net.named_state("finv") {
            tensors.insert(name, v);
        }
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            f_widths: self.pair.f_net.widths(),
            alpha: self.alpha(),
            beta: self.beta(),
            tensors,
        }
    }

    pub fn load_checkpoint(&self, ckpt: &Checkpoint) -> Result<()> {
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        if ckpt.f_widths != self.pair.f_net.widths() {
            return Err(Error::Config(format!(
                "checkpoint widths {:?} do not match {:?}",
                ckpt.f_widths,
                self.pair.f_net.widths()
            )));
        }
        let lookup = |name: &str| ckpt.tensors.get(name).cloned();
        self.pair.f_net.load_named_state("f", &lookup)?;
        self.pair.finv_net.load_named_state("finv", &lookup)?;
        self.params.alpha.set_data(&[ckpt.alpha])?;
        self.params.beta.set_data(&[ckpt.beta])?;
        Ok(())
    }
}

/// `genagg_forward`: aggregate and inverse objective in one pass.
pub fn genagg_forward(agg: &GenAgg, s: &SegmentedSet, mode: Mode) -> Result<(Tensor, Tensor)> {
    agg.forward_with_aux(s, mode)
}

impl Aggregator for GenAgg {
    fn name(&self) -> String {
        "genagg".into()
    }

    fn forward(&self, s: &SegmentedSet, mode: Mode) -> Result<Aggregated> {
        let (out, aux) = self.forward_with_aux(s, mode)?;
        Ok(Aggregated { out, aux: Some(aux) })
    }

    fn parameters(&self) -> Vec<Tensor> {
        let mut p = vec![self.params.alpha.clone(), self.params.beta.clone()];
        p.extend(self.pair.parameters());
        p
    }
}

/// Fixed ⟨f, α, β⟩ (closed form or limit) as a pluggable aggregator.
pub struct SymbolicAggregator {
    pub params: AfmParams,
}

impl Aggregator for SymbolicAggregator {
    fn name(&self) -> String {
        format!("afm{}", self.params.label())
    }

    fn forward(&self, s: &SegmentedSet, mode: Mode) -> Result<Aggregated> {
        Ok(Aggregated::plain(afm_forward(&self.params, s, mode)?))
    }

    fn parameters(&self) -> Vec<Tensor> {
        [&self.params.alpha, &self.params.beta]
            .into_iter()
            .filter(|t| t.requires_grad())
            .cloned()
            .collect()
    }
}

/// `⟨|x|^p, 0, 0⟩` on one multiset, evaluated as
/// `M · ((1/n) Σ (|xᵢ|/M)^p)^(1/p)` with `M = max |xᵢ|` so large `p` does
/// not overflow.
pub fn pow_abs_mean_stabilized(xs: &[f64], p: f64) -> f64 {
    let m = xs.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if m == 0.0 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let inner = xs.iter().map(|x| (x.abs() / m).powf(p)).sum::<f64>() / n;
    m * inner.powf(1.0 / p)
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON parameter checkpoint of a [`GenAgg`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub f_widths: Vec<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub tensors: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn single(xs: &[f64]) -> SegmentedSet {
        SegmentedSet::from_scalar_groups(&[xs.to_vec()]).unwrap()
    }

    fn afm(f: SymbolicF, a: f64, b: f64, xs: &[f64]) -> f64 {
        afm_forward(&AfmParams::symbolic(f, a, b), &single(xs), Mode::Eval)
            .unwrap()
            .item()
    }

    #[test]
    fn worked_examples() {
        assert!((afm(SymbolicF::LogAbs, 1.0, 0.0, &[2.0, -3.0]) - 6.0).abs() < 1e-12);
        assert!((afm(SymbolicF::Square, 0.0, 1.0, &[1.0, 3.0]) - 1.0).abs() < 1e-12);
        assert!((afm(SymbolicF::Exp, 1.0, 0.0, &[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((afm(SymbolicF::Identity, 0.0, 0.0, &[1.0, 2.0, 6.0]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn table_entries() {
        let p = symbolic_params_for(StandardAggregator::Sum);
        assert!(matches!(p.f, AfmFunction::Symbolic(SymbolicF::Identity)));
        assert_eq!((p.alpha(), p.beta()), (1.0, 0.0));
        let p = symbolic_params_for(StandardAggregator::GeometricMean);
        assert!(matches!(p.f, AfmFunction::Symbolic(SymbolicF::LogAbs)));
        assert_eq!((p.alpha(), p.beta()), (0.0, 0.0));
        let p = symbolic_params_for(StandardAggregator::StandardDeviation);
        assert!(matches!(p.f, AfmFunction::Symbolic(SymbolicF::Square)));
        assert_eq!((p.alpha(), p.beta()), (0.0, 1.0));
        let p = symbolic_params_for(StandardAggregator::MaxMagnitude);
        assert!(matches!(p.f, AfmFunction::Limit(LimitCase::MaxMag)));
    }

    #[test]
    fn inverse_roundtrip() {
        let fs = [
            SymbolicF::Identity,
            SymbolicF::LogAbs,
            SymbolicF::Reciprocal,
            SymbolicF::Square,
            SymbolicF::Exp,
            SymbolicF::PowAbs(3.0),
            SymbolicF::PowAbs(-2.0),
            SymbolicF::ExpScaled(-1.5),
        ];
        for f in fs {
            for x in [-2.5, -0.3, 0.7, 4.0] {
                let back = f.inverse(f.eval(x));
                let want = if f.magnitude_only() { x.abs() } else { x };
                assert!((back - want).abs() < 1e-9, "{f}: {x} -> {back}");
            }
        }
    }

    #[test]
    fn exp_rows_are_shift_stable() {
        let lse = afm(SymbolicF::Exp, 1.0, 0.0, &[800.0, 800.0]);
        assert!((lse - (800.0 + 2f64.ln())).abs() < 1e-12);
        let lse = afm(SymbolicF::Exp, 1.0, 0.0, &[-100.0, -101.0]);
        assert!((lse - (-100.0 + (1.0 + (-1f64).exp()).ln())).abs() < 1e-12);
    }

    #[test]
    fn limit_rows_dispatch() {
        let s = single(&[-4.0, 1.0, 2.5]);
        let r = |c| afm_forward(&AfmParams::limit(c), &s, Mode::Eval).unwrap().item();
        assert_eq!(r(LimitCase::Max), 2.5);
        assert_eq!(r(LimitCase::Min), -4.0);
        assert_eq!(r(LimitCase::MaxMag), 4.0);
        assert_eq!(r(LimitCase::MinMag), 1.0);
    }

    #[test]
    fn non_finite_is_reported() {
        let err = afm_forward(
            &AfmParams::symbolic(SymbolicF::LogAbs, 1.0, 0.0),
            &single(&[1e200, 1e200]),
            Mode::Eval,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn inv_loss_examples() {
        let mut r = rng::stream(3, 0);
        let pair = MlpPair::with_default_widths(&mut r);
        // force finv∘f ≡ 0: zero the last layer of finv
        let last = pair.finv_net.layers.last().unwrap();
        last.weight.set_data(&vec![0.0; last.weight.numel()]).unwrap();
        let x = Tensor::new(vec![1], vec![2.0]).unwrap();
        let l = inv_loss(&pair, &x, Mode::Eval).unwrap().item();
        assert!((l - 4.0).abs() < 1e-12);

        let fresh = MlpPair::with_default_widths(&mut r);
        let x = Tensor::new(vec![64], randn(64, &mut r)).unwrap();
        let l = inv_loss(&fresh, &x, Mode::Train).unwrap();
        assert!(l.item().is_finite() && l.item() > 0.0);
        l.backward().unwrap();
        for p in fresh.parameters() {
            assert!(p.grad().unwrap().iter().all(|g| g.is_finite()));
        }
    }

    #[test]
    fn genagg_shapes_and_aux() {
        let mut r = rng::stream(5, 0);
        let agg = GenAgg::new(&DEFAULT_F_WIDTHS, &mut r, rng::stream(5, 1));
        let s = SegmentedSet::from_groups(&[vec![vec![1.0, 2.0], vec![0.5, -1.0]], vec![vec![3.0, 0.0]]]).unwrap();
        let (out, aux) = agg.forward_with_aux(&s, Mode::Train).unwrap();
        assert_eq!(out.shape(), &[2, 2]);
        assert!(aux.item() >= 0.0);
        let loss = out.sum().add(&aux).unwrap();
        loss.backward().unwrap();
        for p in Aggregator::parameters(&agg) {
            assert!(p.grad().is_some());
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut r = rng::stream(8, 0);
        let a = GenAgg::new(&DEFAULT_F_WIDTHS, &mut r, rng::stream(8, 1));
        a.params.alpha.set_data(&[0.7]).unwrap();
        let b = GenAgg::new(&DEFAULT_F_WIDTHS, &mut r, rng::stream(8, 2));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        a.to_checkpoint("abc").save(&path).unwrap();
        b.load_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        let s = single(&[0.3, -1.2, 2.0]);
        let ya = afm_forward(&a.params, &s, Mode::Eval).unwrap().item();
        let yb = afm_forward(&b.params, &s, Mode::Eval).unwrap().item();
        assert_eq!(ya, yb);
        assert_eq!(b.alpha(), 0.7);
    }

    #[test]
    fn stabilized_power_mean() {
        let xs = [1.0, 2.0, 3.0];
        let direct = (xs.iter().map(|x: &f64| x.powi(8)).sum::<f64>() / 3.0).powf(1.0 / 8.0);
        assert!((pow_abs_mean_stabilized(&xs, 8.0) - direct).abs() < 1e-12);
    }
}
