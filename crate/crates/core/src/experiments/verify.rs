use rand::Rng as _;
use serde::Serialize;

use crate::aggregators::{aggregate_standard, SegmentedSet, StandardAggregator};
use crate::error::Result;
use crate::genagg::{afm_forward, symbolic_params_for, AfmFunction, AfmParams, SymbolicF};
use crate::rng;
use crate::tensor::{randn, Mode, Segments, Tensor};

pub const PARAMETRISATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct ParametrisationRow {
    pub aggregator: StandardAggregator,
    pub f: String,
    pub alpha: f64,
    pub beta: f64,
    pub max_rel_error: f64,
    /// Limit rows must match bit for bit.
    pub exact_required: bool,
    pub passed: bool,
}

/// `n_sets` random multisets of 1 to 10 elements with `dim` N(0,1) features.
pub fn random_sets(n_sets: usize, dim: usize, seed: u64) -> Result<SegmentedSet> {
    let mut rng = rng::stream(seed, rng::STREAM_PROBES);
    let counts: Vec<usize> = (0..n_sets).map(|_| rng.gen_range(1..=10)).collect();
    let rows: usize = counts.iter().sum();
    let values = Tensor::new(vec![rows, dim], randn(rows * dim, &mut rng))?;
    SegmentedSet::from_segments(values, Segments::from_counts(&counts)?)
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-9)
}

/// Compares `params` against the direct formula of `agg` on `sets`.
pub fn compare_row(agg: StandardAggregator, params: &AfmParams, sets: &SegmentedSet) -> Result<ParametrisationRow> {
    let want = aggregate_standard(agg, sets)?;
    let got = afm_forward(params, sets, Mode::Eval)?;
    let exact_required = matches!(params.f, AfmFunction::Limit(_));
    let max_rel_error = want
        .data()
        .iter()
        .zip(got.data().iter())
        .map(|(&a, &b)| rel(a, b))
        .fold(0.0, f64::max);
    let passed = if exact_required {
        max_rel_error == 0.0
    } else {
        max_rel_error < PARAMETRISATION_TOLERANCE
    };
    Ok(ParametrisationRow {
        aggregator: agg,
        f: params.f.to_string(),
        alpha: params.alpha(),
        beta: params.beta(),
        max_rel_error,
        exact_required,
        passed,
    })
}

/// Every standard aggregator against its ⟨f, α, β⟩ on `n_sets` random sets.
pub fn verify_parametrisations(n_sets: usize, seed: u64) -> Result<Vec<ParametrisationRow>> {
    let sets = random_sets(n_sets, 1, seed)?;
    StandardAggregator::ALL
        .iter()
        .map(|&a| compare_row(a, &symbolic_params_for(a), &sets))
        .collect()
}

/// The mean row with `α = 1`, which computes the sum; must fail.
pub fn negative_control(n_sets: usize, seed: u64) -> Result<ParametrisationRow> {
    let sets = random_sets(n_sets, 1, seed)?;
    let corrupted = AfmParams::symbolic(SymbolicF::Identity, 1.0, 0.0);
    compare_row(StandardAggregator::Mean, &corrupted, &sets)
}
