//! Multiset aggregation: direct formulas for the standard aggregators and the
//! parametrised baselines (SoftmaxAgg, PowerAgg, PNA).

use std::cell::Cell;
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Linear, Mode, ReduceKind, Segments, Tensor, STABILIZER};

/// A batch of multisets stored as the rows of one `[m×d]` matrix.
///
/// Row order inside a segment carries no meaning.
#[derive(Debug, Clone)]
pub struct SegmentedSet {
    pub values: Tensor,
    pub segments: Segments,
}

impl SegmentedSet {
    pub fn new(values: Tensor, segment_ids: Vec<usize>, n_segments: usize) -> Result<Self> {
        let segments = Segments::new(segment_ids, n_segments)?;
        Self::from_segments(values, segments)
    }

    pub fn from_segments(values: Tensor, segments: Segments) -> Result<Self> {
        if values.shape().len() != 2 || values.rows() != segments.n_rows() {
            return Err(Error::ShapeMismatch {
                op: "segmented_set",
                lhs: values.shape().to_vec(),
                rhs: vec![segments.n_rows()],
            });
        }
        Ok(Self { values, segments })
    }

    /// One segment per group; every element is a row of `d` features.
    pub fn from_groups(groups: &[Vec<Vec<f64>>]) -> Result<Self> {
        let d = groups.iter().flat_map(|g| g.first()).map(Vec::len).next().unwrap_or(1);
        let mut data = Vec::new();
        let mut counts = Vec::with_capacity(groups.len());
        for g in groups {
            counts.push(g.len());
            for row in g {
                if row.len() != d {
                    return Err(Error::Config("rows of differing width".into()));
                }
                data.extend_from_slice(row);
            }
        }
        let rows = data.len() / d;
        Self::from_segments(Tensor::new(vec![rows, d], data)?, Segments::from_counts(&counts)?)
    }

    /// Scalar multisets (`d = 1`).
    pub fn from_scalar_groups(groups: &[Vec<f64>]) -> Result<Self> {
        let groups: Vec<Vec<Vec<f64>>> = groups.iter().map(|g| g.iter().map(|&v| vec![v]).collect()).collect();
        Self::from_groups(&groups)
    }

    pub fn with_values(&self, values: Tensor) -> Result<Self> {
        Self::from_segments(values, self.segments.clone())
    }

    pub fn n_segments(&self) -> usize {
        self.segments.n_segments()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    /// Segment sizes as a `[S×1]` column.
    pub fn counts_column(&self) -> Tensor {
        let c: Vec<f64> = self.segments.counts().iter().map(|&c| c as f64).collect();
        Tensor::column(&c)
    }

    /// Values of segment `s`, feature `j`.
    pub fn segment_feature(&self, s: usize, j: usize) -> Vec<f64> {
        let d = self.dim();
        let v = self.values.data();
        self.segments.range(s).map(|r| v[r * d + j]).collect()
    }
}

/// The thirteen standard aggregators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardAggregator {
    Mean,
    Sum,
    Product,
    MinMagnitude,
    MaxMagnitude,
    Min,
    Max,
    HarmonicMean,
    GeometricMean,
    RootMeanSquare,
    EuclideanNorm,
    StandardDeviation,
    LogSumExp,
}

impl StandardAggregator {
    pub const ALL: [StandardAggregator; 13] = [
        StandardAggregator::Mean,
        StandardAggregator::Sum,
        StandardAggregator::Product,
        StandardAggregator::MinMagnitude,
        StandardAggregator::MaxMagnitude,
        StandardAggregator::Min,
        StandardAggregator::Max,
        StandardAggregator::HarmonicMean,
        StandardAggregator::GeometricMean,
        StandardAggregator::RootMeanSquare,
        StandardAggregator::EuclideanNorm,
        StandardAggregator::StandardDeviation,
        StandardAggregator::LogSumExp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StandardAggregator::Mean => "mean",
            StandardAggregator::Sum => "sum",
            StandardAggregator::Product => "product",
            StandardAggregator::MinMagnitude => "min_magnitude",
            StandardAggregator::MaxMagnitude => "max_magnitude",
            StandardAggregator::Min => "min",
            StandardAggregator::Max => "max",
            StandardAggregator::HarmonicMean => "harmonic_mean",
            StandardAggregator::GeometricMean => "geometric_mean",
            StandardAggregator::RootMeanSquare => "root_mean_square",
            StandardAggregator::EuclideanNorm => "euclidean_norm",
            StandardAggregator::StandardDeviation => "standard_deviation",
            StandardAggregator::LogSumExp => "log_sum_exp",
        }
    }

    /// The formula as a human-readable string.
    pub fn formula(self) -> &'static str {
        match self {
            StandardAggregator::Mean => "(1/n) Σ x_i",
            StandardAggregator::Sum => "Σ x_i",
            StandardAggregator::Product => "∏ |x_i|",
            StandardAggregator::MinMagnitude => "min |x_i|",
            StandardAggregator::MaxMagnitude => "max |x_i|",
            StandardAggregator::Min => "min x_i",
            StandardAggregator::Max => "max x_i",
            StandardAggregator::HarmonicMean => "n / Σ (1/x_i)",
            StandardAggregator::GeometricMean => "(∏ |x_i|)^(1/n)",
            StandardAggregator::RootMeanSquare => "sqrt((1/n) Σ x_i²)",
            StandardAggregator::EuclideanNorm => "sqrt(Σ x_i²)",
            StandardAggregator::StandardDeviation => "sqrt((1/n) Σ (x_i - μ)²)",
            StandardAggregator::LogSumExp => "log(Σ e^x_i)",
        }
    }

    /// Whether aggregating `{x, …, x}` returns `x` (or `|x|` for the
    /// magnitude rows).
    pub fn is_idempotent(self) -> bool {
        !matches!(
            self,
            StandardAggregator::Sum
                | StandardAggregator::Product
                | StandardAggregator::EuclideanNorm
                | StandardAggregator::LogSumExp
                | StandardAggregator::StandardDeviation
        )
    }

    /// Evaluates the formula on one scalar multiset.
    pub fn apply(self, xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        match self {
            StandardAggregator::Mean => xs.iter().sum::<f64>() / n,
            StandardAggregator::Sum => xs.iter().sum(),
            StandardAggregator::Product => xs.iter().map(|x| x.abs()).product(),
            StandardAggregator::MinMagnitude => xs.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min),
            StandardAggregator::MaxMagnitude => xs.iter().map(|x| x.abs()).fold(0.0, f64::max),
            StandardAggregator::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
            StandardAggregator::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            StandardAggregator::HarmonicMean => {
                let s: f64 = xs.iter().map(|&x| 1.0 / stabilize(x)).sum();
                n / stabilize(s)
            }
            StandardAggregator::GeometricMean => xs.iter().map(|x| x.abs()).product::<f64>().powf(1.0 / n),
            StandardAggregator::RootMeanSquare => (xs.iter().map(|x| x * x).sum::<f64>() / n).sqrt(),
            StandardAggregator::EuclideanNorm => xs.iter().map(|x| x * x).sum::<f64>().sqrt(),
            StandardAggregator::StandardDeviation => {
                let mu = xs.iter().sum::<f64>() / n;
                (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n).sqrt()
            }
            StandardAggregator::LogSumExp => {
                let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
            }
        }
    }
}

fn stabilize(d: f64) -> f64 {
    if d.abs() >= STABILIZER {
        d
    } else if d < 0.0 {
        -STABILIZER
    } else {
        STABILIZER
    }
}

impl fmt::Display for StandardAggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StandardAggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let alias = match key.as_str() {
            "min_mag" => "min_magnitude",
            "max_mag" => "max_magnitude",
            "harmonic" => "harmonic_mean",
            "geometric" => "geometric_mean",
            "rms" => "root_mean_square",
            "norm" => "euclidean_norm",
            "std" => "standard_deviation",
            "logsumexp" | "lse" => "log_sum_exp",
            other => other,
        };
        StandardAggregator::ALL
            .into_iter()
            .find(|a| a.name() == alias)
            .ok_or_else(|| Error::UnknownName {
                kind: "aggregator",
                name: s.to_string(),
                valid: StandardAggregator::ALL.map(|a| a.name()).join(", "),
            })
    }
}

/// Direct evaluation of a standard aggregator on every segment and feature.
/// The result is a constant tensor.
pub fn aggregate_standard(agg: StandardAggregator, s: &SegmentedSet) -> Result<Tensor> {
    let d = s.dim();
    let n_seg = s.n_segments();
    let mut out = Vec::with_capacity(n_seg * d);
    for seg in 0..n_seg {
        for j in 0..d {
            out.push(agg.apply(&s.segment_feature(seg, j)));
        }
    }
    Tensor::new(vec![n_seg, d], out)
}

/// Softmax-weighted mean: `Σ xᵢ·softmax(t·x)ᵢ` per segment and feature.
pub fn softmax_agg(s: &SegmentedSet, temperature: &Tensor) -> Result<Tensor> {
    let scaled = s.values.mul(temperature)?;
    // the shift cancels in the ratio, so it carries no gradient
    let shift = scaled
        .detach()
        .segment_reduce(&s.segments, ReduceKind::Max)?
        .segment_expand(&s.segments)?;
    let w = scaled.sub(&shift)?.exp();
    let num = w.mul(&s.values)?.segment_reduce(&s.segments, ReduceKind::Sum)?;
    let den = w.segment_reduce(&s.segments, ReduceKind::Sum)?;
    num.div(&den)
}

/// Inputs are clamped to at least this value before the power mean.
pub const POWER_INPUT_FLOOR: f64 = 1e-7;
/// Exponents closer to zero than this are pushed out to it.
pub const POWER_P_FLOOR: f64 = 1e-3;

/// Power mean `((1/n) Σ max(xᵢ, ε)^p)^(1/p)`. The flag reports whether `p`
/// had to be pushed away from zero.
pub fn power_agg(s: &SegmentedSet, p: &Tensor) -> Result<(Tensor, bool)> {
    let pv = p.item();
    let (p_eff, clamped) = if pv.abs() < POWER_P_FLOOR {
        let sign = if pv < 0.0 { -1.0 } else { 1.0 };
        (Tensor::scalar(sign * POWER_P_FLOOR), true)
    } else {
        (p.clone(), false)
    };
    let x = s.values.clamp_min(POWER_INPUT_FLOOR);
    let mean = x.pow_tensor(&p_eff)?.segment_reduce(&s.segments, ReduceKind::Mean)?;
    let out = mean.pow_tensor(&p_eff.recip())?;
    Ok((out, clamped))
}

/// The 12 PNA blocks `[1, n, 1/n] ⊗ [mean, std, min, max]`, scaler-major,
/// as an `[S×12d]` matrix.
pub fn pna_features(s: &SegmentedSet) -> Result<Tensor> {
    let seg = &s.segments;
    let mean = s.values.segment_reduce(seg, ReduceKind::Mean)?;
    let centered = s.values.sub(&mean.segment_expand(seg)?)?;
    let std = centered.mul(&centered)?.segment_reduce(seg, ReduceKind::Mean)?.sqrt();
    let min = s.values.segment_reduce(seg, ReduceKind::Min)?;
    let max = s.values.segment_reduce(seg, ReduceKind::Max)?;
    let base = [mean, std, min, max];

    let n = s.counts_column();
    let inv_n = n.recip();
    let mut blocks = Vec::with_capacity(12);
    blocks.extend(base.iter().cloned());
    for b in &base {
        blocks.push(b.mul_col(&n)?);
    }
    for b in &base {
        blocks.push(b.mul_col(&inv_n)?);
    }
    Tensor::concat_cols(&blocks)
}

/// PNA as an aggregator: the 12 scaled aggregates followed by a linear map
/// `[12d×d]`.
pub fn pna_agg(s: &SegmentedSet, proj: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let d = s.dim();
    if proj.shape() != [12 * d, d] {
        return Err(Error::ShapeMismatch {
            op: "pna_agg",
            lhs: proj.shape().to_vec(),
            rhs: vec![12 * d, d],
        });
    }
    let y = pna_features(s)?.matmul(proj)?;
    match bias {
        Some(b) => y.add_row(b),
        None => Ok(y),
    }
}

/// Output of a pluggable aggregator: the aggregate and, for aggregators that
/// carry one, an auxiliary loss to add to the task loss.
#[derive(Debug, Clone)]
pub struct Aggregated {
    pub out: Tensor,
    pub aux: Option<Tensor>,
}

impl Aggregated {
    pub fn plain(out: Tensor) -> Self {
        Self { out, aux: None }
    }
}

/// A (possibly learnable) permutation-invariant reduction over segments.
pub trait Aggregator {
    fn name(&self) -> String;
    fn forward(&self, s: &SegmentedSet, mode: Mode) -> Result<Aggregated>;
    fn parameters(&self) -> Vec<Tensor>;
}

impl<A: Aggregator + ?Sized> Aggregator for Rc<A> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn forward(&self, s: &SegmentedSet, mode: Mode) -> Result<Aggregated> {
        (**self).forward(s, mode)
    }

    fn parameters(&self) -> Vec<Tensor> {
        (**self).parameters()
    }
}

/// Sum, mean, max or min through segment reductions.
pub struct FixedAggregator {
    kind: ReduceKind,
}

impl FixedAggregator {
    pub fn new(kind: ReduceKind) -> Self {
        Self { kind }
    }
}

impl Aggregator for FixedAggregator {
    fn name(&self) -> String {
        match self.kind {
            ReduceKind::Sum => "sum",
            ReduceKind::Mean => "mean",
            ReduceKind::Max => "max",
            ReduceKind::Min => "min",
        }
        .to_string()
    }

    fn forward(&self, s: &SegmentedSet, _mode: Mode) -> Result<Aggregated> {
        Ok(Aggregated::plain(s.values.segment_reduce(&s.segments, self.kind)?))
    }

    fn parameters(&self) -> Vec<Tensor> {
        Vec::new()
    }
}

pub struct SoftmaxAggregator {
    pub temperature: Tensor,
}

impl SoftmaxAggregator {
    pub fn new(initial_temperature: f64) -> Self {
        Self {
            temperature: Tensor::scalar_param(initial_temperature),
        }
    }
}

impl Default for SoftmaxAggregator {
    fn default() -> Self {
        Self::new(1.0)
    }
}

impl Aggregator for SoftmaxAggregator {
    fn name(&self) -> String {
        "softmax_agg".into()
    }

    fn forward(&self, s: &SegmentedSet, _mode: Mode) -> Result<Aggregated> {
        Ok(Aggregated::plain(softmax_agg(s, &self.temperature)?))
    }

    fn parameters(&self) -> Vec<Tensor> {
        vec![self.temperature.clone()]
    }
}

pub struct PowerAggregator {
    pub p: Tensor,
    clamp_events: Cell<u64>,
}

impl PowerAggregator {
    pub fn new(initial_p: f64) -> Self {
        Self {
            p: Tensor::scalar_param(initial_p),
            clamp_events: Cell::new(0),
        }
    }

    /// How many forward passes had to push `p` away from zero.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.get()
    }
}

impl Default for PowerAggregator {
    fn default() -> Self {
        Self::new(1.0)
    }
}

impl Aggregator for PowerAggregator {
    fn name(&self) -> String {
        "power_agg".into()
    }

    fn forward(&self, s: &SegmentedSet, _mode: Mode) -> Result<Aggregated> {
        let (out, clamped) = power_agg(s, &self.p)?;
        if clamped {
            self.clamp_events.set(self.clamp_events.get() + 1);
        }
        Ok(Aggregated::plain(out))
    }

    fn parameters(&self) -> Vec<Tensor> {
        vec![self.p.clone()]
    }
}

pub struct PnaAggregator {
    pub proj: Linear,
}

impl PnaAggregator {
    pub fn new(d: usize, rng: &mut Rng) -> Self {
        Self {
            proj: Linear::new(12 * d, d, true, rng),
        }
    }
}

impl Aggregator for PnaAggregator {
    fn name(&self) -> String {
        "pna".into()
    }

    fn forward(&self, s: &SegmentedSet, _mode: Mode) -> Result<Aggregated> {
        Ok(Aggregated::plain(pna_agg(
            s,
            &self.proj.weight,
            self.proj.bias.as_ref(),
        )?))
    }

    fn parameters(&self) -> Vec<Tensor> {
        self.proj.parameters()
    }
}
