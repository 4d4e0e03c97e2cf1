//! Property-based invariants.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use genagg::aggregators::{
    aggregate_standard, pna_agg, power_agg, softmax_agg, Aggregator, FixedAggregator, SegmentedSet,
    StandardAggregator as A,
};
use genagg::distributive::{psi_apply, DistOperator};
use genagg::experiments::pearson_slices;
use genagg::genagg::{
    afm_forward, inv_loss, pow_abs_mean_stabilized, symbolic_params_for, AfmParams, Checkpoint, GenAgg, MlpPair,
    SymbolicF, DEFAULT_F_WIDTHS,
};
use genagg::graph::{random_graph, Gnn, Graph};
use genagg::rng;
use genagg::tensor::{InitScheme, Mode, ReduceKind, Segments};
use genagg::Tensor;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}

/// Up to 6 multisets of 1–10 two-dimensional rows.
fn groups() -> impl Strategy<Value = Vec<Vec<Vec<f64>>>> {
    prop::collection::vec(
        prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 2), 1..=10),
        1..=6,
    )
}

fn positive_groups() -> impl Strategy<Value = Vec<Vec<Vec<f64>>>> {
    prop::collection::vec(
        prop::collection::vec(prop::collection::vec(0.05f64..5.0, 2), 1..=10),
        1..=6,
    )
}

fn shuffled(groups: &[Vec<Vec<f64>>], seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups
        .iter()
        .map(|g| {
            let mut g = g.clone();
            g.shuffle(&mut rng);
            g
        })
        .collect()
}

fn sets(groups: &[Vec<Vec<f64>>]) -> SegmentedSet {
    SegmentedSet::from_groups(groups).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segment_sum_is_order_free(g in groups(), seed in any::<u64>()) {
        let a = sets(&g);
        let b = sets(&shuffled(&g, seed));
        let ra = a.values.segment_reduce(&a.segments, ReduceKind::Sum).unwrap().to_vec();
        let rb = b.values.segment_reduce(&b.segments, ReduceKind::Sum).unwrap().to_vec();
        for (x, y) in ra.iter().zip(&rb) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn backward_twice_doubles_linear_grads(xs in prop::collection::vec(-3.0f64..3.0, 1..8), w in -2.0f64..2.0) {
        let x = Tensor::param(vec![xs.len()], xs.clone()).unwrap();
        let y = x.mul_scalar(w).sum();
        y.backward().unwrap();
        let once = x.grad().unwrap();
        y.backward().unwrap();
        let twice = x.grad().unwrap();
        prop_assert_eq!(once.len(), xs.len());
        for (a, b) in once.iter().zip(&twice) {
            prop_assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn standard_aggregators_are_permutation_invariant(g in groups(), seed in any::<u64>()) {
        let a = sets(&g);
        let b = sets(&shuffled(&g, seed));
        for agg in A::ALL {
            let ya = aggregate_standard(agg, &a).unwrap().to_vec();
            let yb = aggregate_standard(agg, &b).unwrap().to_vec();
            prop_assert!(max_rel(&ya, &yb) < 1e-9, "{agg}");
        }
        let t = Tensor::scalar(1.7);
        prop_assert!(max_rel(&softmax_agg(&a, &t).unwrap().to_vec(), &softmax_agg(&b, &t).unwrap().to_vec()) < 1e-9);
        let p = Tensor::scalar(2.5);
        prop_assert!(max_rel(&power_agg(&a, &p).unwrap().0.to_vec(), &power_agg(&b, &p).unwrap().0.to_vec()) < 1e-9);
        let proj = Tensor::new(vec![24, 2], (0..48).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect()).unwrap();
        prop_assert!(max_rel(&pna_agg(&a, &proj, None).unwrap().to_vec(), &pna_agg(&b, &proj, None).unwrap().to_vec()) < 1e-9);
    }

    #[test]
    fn idempotent_rows_return_the_repeated_value(x in -4.0f64..4.0, n in 1usize..=10) {
        let s = SegmentedSet::from_scalar_groups(&[vec![x; n]]).unwrap();
        for agg in A::ALL.into_iter().filter(|a| a.is_idempotent()) {
            let y = aggregate_standard(agg, &s).unwrap().item();
            let want = match agg {
                A::GeometricMean | A::RootMeanSquare | A::MinMagnitude | A::MaxMagnitude => x.abs(),
                A::StandardDeviation => continue,
                _ => x,
            };
            prop_assert!(rel_err(y, want) < 1e-9, "{agg}: {y} vs {want}");
        }
        prop_assert!(aggregate_standard(A::StandardDeviation, &s).unwrap().item().abs() < 1e-6);
    }

    #[test]
    fn power_agg_matches_mean_and_rms(g in positive_groups()) {
        let s = sets(&g);
        let (p1, _) = power_agg(&s, &Tensor::scalar(1.0)).unwrap();
        prop_assert!(max_rel(&p1.to_vec(), &aggregate_standard(A::Mean, &s).unwrap().to_vec()) < 1e-9);
        let (p2, _) = power_agg(&s, &Tensor::scalar(2.0)).unwrap();
        prop_assert!(max_rel(&p2.to_vec(), &aggregate_standard(A::RootMeanSquare, &s).unwrap().to_vec()) < 1e-9);
    }

    #[test]
    fn softmax_agg_is_monotone_in_temperature(g in groups()) {
        let s = sets(&g);
        let at = |t: f64| softmax_agg(&s, &Tensor::scalar(t)).unwrap().to_vec();
        let (hi, mid, lo) = (at(10.0), at(0.0), at(-10.0));
        for i in 0..mid.len() {
            prop_assert!(hi[i] >= mid[i] - 1e-12 && mid[i] >= lo[i] - 1e-12);
        }
    }

    #[test]
    fn table_parametrisations_match_direct_formulas(g in groups()) {
        let s = sets(&g);
        for agg in A::ALL {
            let y = afm_forward(&symbolic_params_for(agg), &s, Mode::Eval).unwrap().to_vec();
            let want = aggregate_standard(agg, &s).unwrap().to_vec();
            prop_assert!(max_rel(&y, &want) < 1e-6, "{agg}");
        }
    }

    #[test]
    fn symbolic_inverse_round_trips(x in -6.0f64..6.0) {
        prop_assume!(x.abs() > 1e-6);
        for f in [SymbolicF::Identity, SymbolicF::LogAbs, SymbolicF::Reciprocal, SymbolicF::Square, SymbolicF::Exp] {
            let back = f.inverse(f.eval(x));
            let want = if f.magnitude_only() { x.abs() } else { x };
            prop_assert!((back - want).abs() <= 1e-9 * want.abs().max(1.0), "{f}: {back} vs {want}");
        }
    }

    #[test]
    fn power_means_converge_to_max_magnitude(
        base in 0.1f64..2.0,
        rest in prop::collection::vec(0.0f64..1.0, 0..9),
        sign in any::<bool>(),
    ) {
        // largest magnitude at least 1.2 times every other one
        let top = base * 1.2f64.powi(3);
        let mut xs: Vec<f64> = rest.iter().map(|u| base * (0.05 + u)).collect();
        xs.push(if sign { top } else { -top });
        let means: Vec<f64> = [2.0, 8.0, 32.0].iter().map(|&p| pow_abs_mean_stabilized(&xs, p)).collect();
        prop_assert!(means[0] <= means[1] + 1e-12 && means[1] <= means[2] + 1e-12);
        prop_assert!(means[2] <= top * (1.0 + 1e-12));
        // the p-norm form (α = 1) drops the (1/n)^(1/p) factor
        let n = xs.len() as f64;
        let norm32 = means[2] * n.powf(1.0 / 32.0);
        prop_assert!(rel_err(norm32, top) < 0.02, "{norm32} vs {top}");
    }

    #[test]
    fn sum_is_n_times_mean(g in groups()) {
        let s = sets(&g);
        let sum = afm_forward(&AfmParams::symbolic(SymbolicF::Identity, 1.0, 0.0), &s, Mode::Eval).unwrap().to_vec();
        let mean = afm_forward(&AfmParams::symbolic(SymbolicF::Identity, 0.0, 0.0), &s, Mode::Eval).unwrap().to_vec();
        let counts = s.counts_column().to_vec();
        for (i, (a, m)) in sum.iter().zip(&mean).enumerate() {
            let n = counts[i / s.dim()];
            prop_assert!(rel_err(*a, n * m) < 1e-9);
        }
    }

    #[test]
    fn afm_is_permutation_invariant(g in groups(), seed in any::<u64>(), init in 0u64..1000) {
        let a = sets(&g);
        let b = sets(&shuffled(&g, seed));
        for agg in [A::Mean, A::GeometricMean, A::StandardDeviation, A::LogSumExp, A::HarmonicMean] {
            let p = symbolic_params_for(agg);
            let ya = afm_forward(&p, &a, Mode::Eval).unwrap().to_vec();
            let yb = afm_forward(&p, &b, Mode::Eval).unwrap().to_vec();
            prop_assert!(max_rel(&ya, &yb) < 1e-6, "{agg}");
        }
        let learned = GenAgg::new(&DEFAULT_F_WIDTHS, &mut rng::stream(init, rng::STREAM_INIT), rng::stream(init, rng::STREAM_PROBES));
        let ya = learned.forward(&a, Mode::Eval).unwrap().out.to_vec();
        let yb = learned.forward(&b, Mode::Eval).unwrap().out.to_vec();
        prop_assert!(max_rel(&ya, &yb) < 1e-6);
    }

    #[test]
    fn inv_loss_is_non_negative(xs in prop::collection::vec(-10.0f64..10.0, 2..40), init in any::<u64>(), train in any::<bool>()) {
        let pair = MlpPair::with_default_widths(&mut rng::stream(init, rng::STREAM_INIT));
        let mode = if train { Mode::Train } else { Mode::Eval };
        let l = inv_loss(&pair, &Tensor::new(vec![xs.len()], xs).unwrap(), mode).unwrap().item();
        prop_assert!(l >= 0.0 && l.is_finite());
    }

    #[test]
    fn multiplicative_psi_is_commutative_and_associative(
        a in 0.5f64..2.0, b in 0.5f64..2.0, c in 0.5f64..2.0,
        signs in prop::array::uniform3(any::<bool>()),
    ) {
        let s = |v: f64, neg: bool| if neg { -v } else { v };
        let (a, b, c) = (s(a, signs[0]), s(b, signs[1]), s(c, signs[2]));
        for f in [SymbolicF::Identity, SymbolicF::LogAbs, SymbolicF::Reciprocal, SymbolicF::Square, SymbolicF::Exp] {
            let op = DistOperator::multiplicative(f);
            let psi = |x, y| psi_apply(op, x, y).unwrap();
            prop_assert!(rel_err(psi(a, b), psi(b, a)) < 1e-9, "{f}");
            prop_assert!(rel_err(psi(psi(a, b), c), psi(a, psi(b, c))) < 1e-9, "{f}");
        }
    }

    #[test]
    fn random_graphs_are_valid(seed in any::<u64>(), n in 2usize..12, density in 0.05f64..0.5) {
        let g = random_graph(n, density, 2, seed).unwrap();
        let mut seen = std::collections::HashSet::new();
        let mut indeg = vec![0; n];
        for &(s, d) in g.edges() {
            prop_assert!(s != d && s < n && d < n);
            prop_assert!(seen.insert((s, d)));
            indeg[d] += 1;
        }
        prop_assert!(indeg.iter().all(|&k| k >= 1));
        // rebuilding edges from the neighbourhood view gives the edge set back
        let (src, seg) = g.neighbour_index();
        let rebuilt: Vec<(usize, usize)> = src.iter().zip(seg.ids()).map(|(&s, &d)| (s, d)).collect();
        prop_assert_eq!(rebuilt.as_slice(), g.edges());
    }

    #[test]
    fn pearson_stays_in_range(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..30)) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(t.iter().any(|v| (v - t[0]).abs() > 1e-6));
        let r = pearson_slices(&p, &t).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gnn_is_permutation_equivariant(seed in any::<u64>(), perm_seed in any::<u64>(), learned in any::<bool>()) {
        let g = random_graph(7, 0.3, 1, seed).unwrap();
        let mut perm: Vec<usize> = (0..7).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let h = g.permuted(&perm).unwrap();

        let mut init = rng::stream(seed, rng::STREAM_INIT);
        let gnn = Gnn::build(
            &[1, 4, 4, 4, 1],
            |k, _| -> Box<dyn Aggregator> {
                if learned {
                    Box::new(GenAgg::new(&DEFAULT_F_WIDTHS, &mut rng::stream(seed, 100 + k as u64), rng::stream(seed, 200 + k as u64)))
                } else {
                    Box::new(FixedAggregator::new(ReduceKind::Mean))
                }
            },
            &mut init,
        )
        .unwrap();
        let a = gnn.forward(&g, Mode::Eval).unwrap().0.to_vec();
        let b = gnn.forward(&h, Mode::Eval).unwrap().0.to_vec();
        for i in 0..7 {
            prop_assert!(rel_err(b[perm[i]], a[i]) < 1e-6);
        }
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>()) {
        let make = |s| GenAgg::new(&DEFAULT_F_WIDTHS, &mut rng::stream(s, rng::STREAM_INIT), rng::stream(s, rng::STREAM_PROBES));
        let src = make(seed);
        src.params.alpha.set_data(&[0.37]).unwrap();
        // move the running statistics away from their defaults
        let x = SegmentedSet::from_scalar_groups(&[vec![0.5, -1.5, 2.0], vec![3.0]]).unwrap();
        src.forward(&x, Mode::Train).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        src.to_checkpoint("abc").save(&path).unwrap();
        let dst = make(seed.wrapping_add(1));
        dst.load_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        prop_assert_eq!(dst.alpha(), 0.37);
        let ya = src.forward(&x, Mode::Eval).unwrap().out.to_vec();
        let yb = dst.forward(&x, Mode::Eval).unwrap().out.to_vec();
        prop_assert_eq!(ya, yb);
    }
}

#[test]
fn kaiming_variance_matches_fan_in() {
    for fan_in in [1, 4, 16] {
        let xs = InitScheme::KaimingNormal { fan_in }.sample(100_000, &mut rng::stream(9, rng::STREAM_INIT));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        let want = 2.0 / fan_in as f64;
        assert!((var - want).abs() / want < 0.05, "fan_in {fan_in}: {var}");
    }
}

#[test]
fn graph_matches_recorded_fixture() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/graph_n8_d03_seed7.json");
    let fixture = genagg::graph::GraphFixture::load(&path).unwrap();
    let g = random_graph(8, 0.3, 2, 7).unwrap();
    assert_eq!(g.to_fixture(), fixture);
    assert_eq!(Graph::from_fixture(&fixture).unwrap().edges(), g.edges());
}

#[test]
fn segments_reject_unused_ids() {
    assert!(Segments::new(vec![1, 1], 2).is_err());
}
