use crate::aggregators::{aggregate_standard, SegmentedSet, StandardAggregator};
use crate::error::Result;
use crate::graph::{random_graph_with, Graph};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Neighbourhoods of `g` and their standard aggregates.
pub fn gen_dataset(g: &Graph, agg: StandardAggregator) -> Result<(SegmentedSet, Tensor)> {
    let x = g.neighbourhoods();
    let y = aggregate_standard(agg, &x)?;
    Ok((x, y))
}

/// The regression target for `agg`. Identical to [`aggregate_standard`]
/// except for the harmonic mean, which is taken over magnitudes: the signed
/// version has no finite moments on Gaussian inputs.
pub fn experiment_target(agg: StandardAggregator, x: &SegmentedSet) -> Result<Tensor> {
    match agg {
        StandardAggregator::HarmonicMean => aggregate_standard(agg, &x.with_values(x.values.abs().detach())?),
        _ => aggregate_standard(agg, x),
    }
}

/// Independently sampled graphs treated as one disconnected graph.
pub struct Batch {
    pub graph: Graph,
    pub x: SegmentedSet,
    pub y: Tensor,
}

pub fn sample_batch(
    n_graphs: usize,
    n_nodes: usize,
    density: f64,
    dim: usize,
    target: StandardAggregator,
    rng: &mut Rng,
) -> Result<Batch> {
    let graphs = (0..n_graphs)
        .map(|_| random_graph_with(n_nodes, density, dim, rng))
        .collect::<Result<Vec<_>>>()?;
    let graph = Graph::disjoint_union(&graphs)?;
    let x = graph.neighbourhoods();
    let y = experiment_target(target, &x)?;
    Ok(Batch { graph, x, y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::random_graph;

    #[test]
    fn singleton_mean() {
        // star: every leaf points at node 0 except 1, so 0 sees {x1} only
        let g = Graph::new(3, vec![(1, 0), (0, 1), (0, 2)], vec![5.0, -1.5, 2.0], 1).unwrap();
        let (_, y) = gen_dataset(&g, StandardAggregator::Mean).unwrap();
        assert_eq!(y.to_vec()[0], -1.5);
    }

    #[test]
    fn two_cycle_sum() {
        let g = Graph::new(2, vec![(0, 1), (1, 0)], vec![1.0, 2.0], 1).unwrap();
        let (_, y) = gen_dataset(&g, StandardAggregator::Sum).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 1.0]);
    }

    #[test]
    fn singleton_std_is_zero() {
        let g = Graph::new(2, vec![(0, 1), (1, 0)], vec![1.0, 2.0, 3.0, 4.0], 2).unwrap();
        let (_, y) = gen_dataset(&g, StandardAggregator::StandardDeviation).unwrap();
        assert_eq!(y.to_vec(), vec![0.0; 4]);
    }

    #[test]
    fn matches_naive_loop() {
        for a in StandardAggregator::ALL {
            let g = random_graph(8, 0.3, 3, 21).unwrap();
            let (_, y) = gen_dataset(&g, a).unwrap();
            let y = y.to_vec();
            let feats = g.feature_rows();
            for i in 0..8 {
                for j in 0..3 {
                    let xs: Vec<f64> = g
                        .edges()
                        .iter()
                        .filter(|e| e.1 == i)
                        .map(|e| feats[e.0 * 3 + j])
                        .collect();
                    assert_eq!(y[i * 3 + j], a.apply(&xs), "{a}");
                }
            }
        }
    }

    #[test]
    fn harmonic_target_uses_magnitudes() {
        let x = SegmentedSet::from_scalar_groups(&[vec![-1.0, 2.0]]).unwrap();
        let y = experiment_target(StandardAggregator::HarmonicMean, &x).unwrap().item();
        assert!((y - 4.0 / 3.0).abs() < 1e-12);
    }
}
