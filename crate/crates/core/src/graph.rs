//! Random directed graphs and a GraphConv stack with pluggable aggregation.
//!
//! An edge `(src, dst)` puts `src` in the neighbourhood of `dst`. Graphs carry
//! no self-loops and no duplicate edges, and generation guarantees every node
//! at least one incoming edge so no neighbourhood is empty.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::aggregators::{Aggregator, SegmentedSet};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{randn, InitScheme, Mode, Segments, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    /// Sorted by `(dst, src)`.
    edges: Vec<(usize, usize)>,
    features: Vec<f64>,
    dim: usize,
    /// Edges added because their `dst` had no incoming edge.
    pub repaired: Vec<(usize, usize)>,
    pub seed: Option<u64>,
}

impl Graph {
    pub fn new(n_nodes: usize, edges: Vec<(usize, usize)>, features: Vec<f64>, dim: usize) -> Result<Self> {
        if n_nodes == 0 || dim == 0 || features.len() != n_nodes * dim {
            return Err(Error::InvalidGraph(format!(
                "{n_nodes} nodes × {dim} features but {} values",
                features.len()
            )));
        }
        let mut edges = edges;
        edges.sort_unstable_by_key(|&(s, d)| (d, s));
        for w in edges.windows(2) {
            if w[0] == w[1] {
                return Err(Error::InvalidGraph(format!("duplicate edge {:?}", w[0])));
            }
        }
        let mut in_degree = vec![0usize; n_nodes];
        for &(s, d) in &edges {
            if s >= n_nodes || d >= n_nodes {
                return Err(Error::InvalidGraph(format!("edge ({s}, {d}) out of range")));
            }
            if s == d {
                return Err(Error::InvalidGraph(format!("self-loop on {s}")));
            }
            in_degree[d] += 1;
        }
        if let Some(i) = in_degree.iter().position(|&k| k == 0) {
            return Err(Error::EmptyNeighbourhood(i));
        }
        Ok(Self {
            n_nodes,
            edges,
            features,
            dim,
            repaired: Vec::new(),
            seed: None,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> Tensor {
        Tensor::new(vec![self.n_nodes, self.dim], self.features.clone()).expect("validated")
    }

    pub fn feature_rows(&self) -> &[f64] {
        &self.features
    }

    /// Source row of every edge, grouped by destination.
    pub fn neighbour_index(&self) -> (Vec<usize>, Segments) {
        let src = self.edges.iter().map(|&(s, _)| s).collect();
        let dst = self.edges.iter().map(|&(_, d)| d).collect();
        let seg = Segments::new(dst, self.n_nodes).expect("every node has an incoming edge");
        (src, seg)
    }

    /// The multiset of neighbour rows of `z` for every node.
    pub fn neighbourhoods_of(&self, z: &Tensor) -> Result<SegmentedSet> {
        if z.rows() != self.n_nodes {
            return Err(Error::ShapeMismatch {
                op: "neighbourhoods",
                lhs: z.shape().to_vec(),
                rhs: vec![self.n_nodes],
            });
        }
        let (src, seg) = self.neighbour_index();
        SegmentedSet::from_segments(z.gather_rows(&src)?, seg)
    }

    pub fn neighbourhoods(&self) -> SegmentedSet {
        self.neighbourhoods_of(&self.features()).expect("validated")
    }

    /// All graphs side by side, node ids offset.
    pub fn disjoint_union(graphs: &[Graph]) -> Result<Graph> {
        let dim = graphs.first().ok_or(Error::EmptyBatch)?.dim;
        let mut edges = Vec::new();
        let mut features = Vec::new();
        let mut offset = 0;
        for g in graphs {
            if g.dim != dim {
                return Err(Error::InvalidGraph(format!("feature widths {dim} and {}", g.dim)));
            }
            edges.extend(g.edges.iter().map(|&(s, d)| (s + offset, d + offset)));
            features.extend_from_slice(&g.features);
            offset += g.n_nodes;
        }
        Graph::new(offset, edges, features, dim)
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n_nodes {
            return Err(Error::LengthMismatch(perm.len(), self.n_nodes));
        }
        let edges = self.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();
        let mut features = vec![0.0; self.features.len()];
        for (i, &p) in perm.iter().enumerate() {
            features[p * self.dim..(p + 1) * self.dim]
                .copy_from_slice(&self.features[i * self.dim..(i + 1) * self.dim]);
        }
        Graph::new(self.n_nodes, edges, features, self.dim)
    }

    pub fn to_fixture(&self) -> GraphFixture {
        GraphFixture {
            n_nodes: self.n_nodes,
            edges: self.edges.iter().map(|&(s, d)| [s, d]).collect(),
            features: self.features.clone(),
            dim: self.dim,
            seed: self.seed,
            repaired: self.repaired.iter().map(|&(s, d)| [s, d]).collect(),
        }
    }

    pub fn from_fixture(f: &GraphFixture) -> Result<Self> {
        let mut g = Graph::new(
            f.n_nodes,
            f.edges.iter().map(|e| (e[0], e[1])).collect(),
            f.features.clone(),
            f.dim,
        )?;
        g.seed = f.seed;
        g.repaired = f.repaired.iter().map(|e| (e[0], e[1])).collect();
        Ok(g)
    }
}

/// JSON form of a [`Graph`]. Features are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFixture {
    pub n_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub features: Vec<f64>,
    pub dim: usize,
    pub seed: Option<u64>,
    #[serde(default)]
    pub repaired: Vec<[usize; 2]>,
}

impl GraphFixture {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// `⌊density·n²⌋` distinct directed pairs without self-loops, then one
/// incoming edge from a random other node for every node left without one.
/// Features are standard normal.
pub fn random_graph_with(n: usize, density: f64, d: usize, rng: &mut Rng) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidGraph(format!("need at least 2 nodes, got {n}")));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidGraph(format!("density {density} outside (0, 1]")));
    }
    let requested = (density * (n * n) as f64).floor() as usize;
    let available = n * (n - 1);
    if requested > available {
        return Err(Error::TooManyEdges { requested, available });
    }
    // pair k ↦ (src = k / (n−1), dst = k % (n−1), skipping src)
    let mut edges: Vec<(usize, usize)> = sample(rng, available, requested)
        .into_iter()
        .map(|k| {
            let src = k / (n - 1);
            let mut dst = k % (n - 1);
            if dst >= src {
                dst += 1;
            }
            (src, dst)
        })
        .collect();

    let mut in_degree = vec![0usize; n];
    for &(_, d) in &edges {
        in_degree[d] += 1;
    }
    let mut repaired = Vec::new();
    for (node, &k) in in_degree.iter().enumerate() {
        if k == 0 {
            let mut src = rng.gen_range(0..n - 1);
            if src >= node {
                src += 1;
            }
            repaired.push((src, node));
        }
    }
    edges.extend_from_slice(&repaired);
    let features = randn(n * d, rng);
    let mut g = Graph::new(n, edges, features, d)?;
    g.repaired = repaired;
    Ok(g)
}

pub fn random_graph(n: usize, density: f64, d: usize, seed: u64) -> Result<Graph> {
    let mut g = random_graph_with(n, density, d, &mut rng::stream(seed, rng::STREAM_GRAPH))?;
    g.seed = Some(seed);
    Ok(g)
}

/// `out = act(z·W₁ + AGG_{j∈𝒩ᵢ}(z_j)·W₂)`, weights stored `[d_in×d_out]`.
pub struct GraphConvLayer {
    pub w1: Tensor,
    pub w2: Tensor,
    pub aggregator: Box<dyn Aggregator>,
    pub mish: bool,
}

impl GraphConvLayer {
    pub fn new(w1: Tensor, w2: Tensor, aggregator: Box<dyn Aggregator>, mish: bool) -> Result<Self> {
        if w1.shape() != w2.shape() || w1.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "graphconv",
                lhs: w1.shape().to_vec(),
                rhs: w2.shape().to_vec(),
            });
        }
        Ok(Self {
            w1,
            w2,
            aggregator,
            mish,
        })
    }

    /// Kaiming-normal weights, no bias.
    pub fn init(d_in: usize, d_out: usize, aggregator: Box<dyn Aggregator>, mish: bool, rng: &mut Rng) -> Self {
        let init = InitScheme::KaimingNormal { fan_in: d_in };
        let w = |rng: &mut Rng| Tensor::param(vec![d_in, d_out], init.sample(d_in * d_out, rng)).expect("shape");
        let w1 = w(rng);
        let w2 = w(rng);
        Self {
            w1,
            w2,
            aggregator,
            mish,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.w1.shape()[1]
    }

    /// Output and the aggregator's auxiliary loss, if any.
    pub fn forward(&self, g: &Graph, z: &Tensor, mode: Mode) -> Result<(Tensor, Option<Tensor>)> {
        if z.shape() != [g.n_nodes(), self.d_in()] {
            return Err(Error::ShapeMismatch {
                op: "graphconv",
                lhs: z.shape().to_vec(),
                rhs: vec![g.n_nodes(), self.d_in()],
            });
        }
        let agg = self.aggregator.forward(&g.neighbourhoods_of(z)?, mode)?;
        let out = z.matmul(&self.w1)?.add(&agg.out.matmul(&self.w2)?)?;
        let out = if self.mish { out.mish() } else { out };
        Ok((out, agg.aux))
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = vec![self.w1.clone(), self.w2.clone()];
        p.extend(self.aggregator.parameters());
        p
    }
}

pub fn graphconv_forward(layer: &GraphConvLayer, g: &Graph, z: &Tensor, mode: Mode) -> Result<Tensor> {
    Ok(layer.forward(g, z, mode)?.0)
}

/// A stack of GraphConv layers with Mish on all but the last.
pub struct Gnn {
    pub layers: Vec<GraphConvLayer>,
}

impl Gnn {
    pub fn new(layers: Vec<GraphConvLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a GNN needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].d_out() != w[1].d_in() {
                return Err(Error::ShapeMismatch {
                    op: "gnn",
                    lhs: w[0].w1.shape().to_vec(),
                    rhs: w[1].w1.shape().to_vec(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// `dims = [d_in, h, …, d_out]`; `make_agg(layer, width)` builds the
    /// aggregator of each layer.
    pub fn build(
        dims: &[usize],
        mut make_agg: impl FnMut(usize, usize) -> Box<dyn Aggregator>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!("GNN dims {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| GraphConvLayer::init(w[0], w[1], make_agg(k, w[0]), k != last, rng))
            .collect();
        Self::new(layers)
    }

    /// Predictions and the summed auxiliary losses (zero when no layer has
    /// one).
    pub fn forward(&self, g: &Graph, mode: Mode) -> Result<(Tensor, Tensor)> {
        let mut z = g.features();
        let mut aux: Option<Tensor> = None;
        for layer in &self.layers {
            let (out, a) = layer.forward(g, &z, mode)?;
            z = out;
            if let Some(a) = a {
                aux = Some(match aux {
                    Some(acc) => acc.add(&a)?,
                    None => a,
                });
            }
        }
        Ok((z, aux.unwrap_or_else(|| Tensor::scalar(0.0))))
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(GraphConvLayer::parameters).collect()
    }
}

pub fn gnn_forward(gnn: &Gnn, g: &Graph, mode: Mode) -> Result<(Tensor, Tensor)> {
    gnn.forward(g, mode)
}
