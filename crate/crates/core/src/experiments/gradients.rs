use rand::Rng as _;
use serde::Serialize;

use crate::aggregators::{pna_agg, power_agg, softmax_agg, Aggregator, SegmentedSet, StandardAggregator};
use crate::error::Result;
use crate::genagg::{afm_forward, inv_loss, symbolic_params_for, AfmParams, GenAgg, MlpPair, DEFAULT_F_WIDTHS};
use crate::graph::{random_graph, Gnn};
use crate::rng::{self, Rng};
use crate::tensor::{
    finite_diff_check, finite_diff_check_params, randn, BatchNorm, Linear, Mode, ReduceKind, Segments, Tensor,
};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
pub const GNN_TOLERANCE: f64 = 1e-3;
const EPS: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradRow {
    pub name: String,
    pub points: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Copy)]
enum Domain {
    Normal,
    /// `|x| ∈ [0.3, 2]`, random sign.
    AwayFromZero,
    /// `x ∈ [0.3, 2]`
    Positive,
}

fn draw(domain: Domain, n: usize, rng: &mut Rng) -> Vec<f64> {
    match domain {
        Domain::Normal => randn(n, rng),
        Domain::AwayFromZero => (0..n)
            .map(|_| {
                let m = rng.gen_range(0.3..2.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
        Domain::Positive => (0..n).map(|_| rng.gen_range(0.3..2.0)).collect(),
    }
}

type Op = Box<dyn Fn(&Tensor) -> Result<Tensor>>;

struct Check {
    name: String,
    shape: Vec<usize>,
    domain: Domain,
    op: Op,
}

fn check(
    name: impl Into<String>,
    shape: &[usize],
    domain: Domain,
    op: impl Fn(&Tensor) -> Result<Tensor> + 'static,
) -> Check {
    Check {
        name: name.into(),
        shape: shape.to_vec(),
        domain,
        op: Box::new(op),
    }
}

fn constant(shape: &[usize], domain: Domain, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), draw(domain, n, rng)).expect("shape")
}

/// Six rows in segments of 1, 2 and 3.
fn segments() -> Segments {
    Segments::from_counts(&[1, 2, 3]).expect("nonempty")
}

fn primitive_checks(rng: &mut Rng) -> Vec<Check> {
    use Domain::*;
    let s = [4, 3];
    let mut v = vec![
        check("neg", &s, Normal, |x| Ok(x.neg())),
        check("exp", &s, Normal, |x| Ok(x.exp())),
        check("log", &s, AwayFromZero, |x| Ok(x.log())),
        check("abs", &s, AwayFromZero, |x| Ok(x.abs())),
        check("tanh", &s, Normal, |x| Ok(x.tanh())),
        check("sqrt", &s, Positive, |x| Ok(x.sqrt())),
        check("recip", &s, AwayFromZero, |x| Ok(x.recip())),
        check("pow(3)", &s, Normal, |x| Ok(x.pow(3.0))),
        check("pow(2.5)", &s, Positive, |x| Ok(x.pow(2.5))),
        check("clamp_min", &s, AwayFromZero, |x| Ok(x.clamp_min(0.0))),
        check("mish", &s, Normal, |x| Ok(x.mish())),
        check("add_scalar", &s, Normal, |x| Ok(x.add_scalar(0.7))),
        check("mul_scalar", &s, Normal, |x| Ok(x.mul_scalar(-1.3))),
        check("sum", &s, Normal, |x| Ok(x.sum())),
        check("mean", &s, Normal, |x| Ok(x.mean())),
        check("reshape", &s, Normal, |x| x.reshape(vec![3, 4])),
        check("slice_rows", &s, Normal, |x| x.slice_rows(1, 3)),
        check("gather_rows", &s, Normal, |x| x.gather_rows(&[3, 0, 0, 2])),
        check("concat_rows", &s, Normal, |x| {
            Tensor::concat_rows(&[x.clone(), x.mul_scalar(2.0)])
        }),
        check("concat_cols", &s, Normal, |x| {
            Tensor::concat_cols(&[x.exp(), x.clone()])
        }),
    ];

    let c = constant(&s, Normal, rng);
    let d = constant(&s, AwayFromZero, rng);
    v.push({
        let c = c.clone();
        check("add", &s, Normal, move |x| x.add(&c))
    });
    v.push({
        let c = c.clone();
        check("sub", &s, Normal, move |x| c.sub(x))
    });
    v.push({
        let c = c.clone();
        check("mul", &s, Normal, move |x| x.mul(&c))
    });
    v.push({
        let d = d.clone();
        check("div (numerator)", &s, Normal, move |x| x.div(&d))
    });
    v.push({
        let c = c.clone();
        check("div (denominator)", &s, AwayFromZero, move |x| c.div(x))
    });
    v.push({
        let c = c.clone();
        check("mul (scalar broadcast)", &[1], Normal, move |x| c.mul(x))
    });

    let b = constant(&[3, 2], Normal, rng);
    let a = constant(&[5, 4], Normal, rng);
    v.push({
        let b = b.clone();
        check("matmul (lhs)", &s, Normal, move |x| x.matmul(&b))
    });
    v.push({
        let a = a.clone();
        check("matmul (rhs)", &s, Normal, move |x| a.matmul(x))
    });
    v.push({
        let c = c.clone();
        check("add_row", &[3], Normal, move |x| c.add_row(x))
    });
    v.push({
        let c = c.clone();
        check("mul_col", &[4], Normal, move |x| c.mul_col(x))
    });
    let p = constant(&s, Positive, rng);
    v.push(check("pow_tensor (base)", &s, Positive, |x| {
        x.pow_tensor(&Tensor::scalar(1.7))
    }));
    v.push(check("pow_tensor (exponent)", &[1], Normal, move |x| p.pow_tensor(x)));

    let seg_shape = [6, 2];
    for (name, kind) in [
        ("segment_reduce sum", ReduceKind::Sum),
        ("segment_reduce mean", ReduceKind::Mean),
        ("segment_reduce max", ReduceKind::Max),
        ("segment_reduce min", ReduceKind::Min),
    ] {
        v.push(check(name, &seg_shape, Normal, move |x| {
            x.segment_reduce(&segments(), kind)
        }));
    }
    v.push(check("segment_expand", &[3, 2], Normal, |x| {
        x.segment_expand(&segments())
    }));

    let bn = BatchNorm::new(3);
    bn.gamma.set_data(&draw(Positive, 3, rng)).expect("len");
    bn.beta.set_data(&randn(3, rng)).expect("len");
    v.push(check("batchnorm (train)", &[5, 3], Normal, move |x| {
        bn.forward_with(x, Mode::Train, false)
    }));
    let lin = Linear::new(3, 2, true, rng);
    v.push(check("linear", &s, Normal, move |x| lin.forward(x)));

    let set = |x: &Tensor| SegmentedSet::from_segments(x.clone(), segments());
    v.push(check("softmax_agg (values)", &seg_shape, Normal, move |x| {
        softmax_agg(&set(x)?, &Tensor::scalar(0.8))
    }));
    let vals = constant(&seg_shape, Normal, rng);
    v.push(check("softmax_agg (temperature)", &[1], Normal, move |t| {
        softmax_agg(&set(&vals)?, t)
    }));
    v.push(check("power_agg (values)", &seg_shape, Positive, move |x| {
        Ok(power_agg(&set(x)?, &Tensor::scalar(2.3))?.0)
    }));
    let pos = constant(&seg_shape, Positive, rng);
    v.push(check("power_agg (p)", &[1], Positive, move |p| {
        Ok(power_agg(&set(&pos)?, p)?.0)
    }));
    let proj = constant(&[24, 2], Normal, rng);
    v.push(check("pna_agg", &seg_shape, Normal, move |x| {
        pna_agg(&set(x)?, &proj, None)
    }));

    for a in StandardAggregator::ALL {
        let domain = match a {
            StandardAggregator::HarmonicMean => Positive,
            StandardAggregator::Product | StandardAggregator::GeometricMean => AwayFromZero,
            _ => Normal,
        };
        let params = symbolic_params_for(a);
        v.push(check(format!("afm {}", a.name()), &seg_shape, domain, move |x| {
            afm_forward(&params, &set(x)?, Mode::Eval)
        }));
    }
    let vals = constant(&seg_shape, Normal, rng);
    let sq = match symbolic_params_for(StandardAggregator::StandardDeviation).f {
        crate::genagg::AfmFunction::Symbolic(f) => f,
        _ => unreachable!(),
    };
    {
        let vals = vals.clone();
        v.push(check("afm alpha", &[1], Normal, move |alpha| {
            let params = AfmParams {
                alpha: alpha.clone(),
                ..AfmParams::symbolic(sq, 0.0, 0.5)
            };
            afm_forward(&params, &set(&vals)?, Mode::Eval)
        }));
    }
    v.push(check("afm beta", &[1], Normal, move |beta| {
        let params = AfmParams {
            beta: beta.clone(),
            ..AfmParams::symbolic(sq, 0.3, 0.0)
        };
        afm_forward(&params, &set(&vals)?, Mode::Eval)
    }));

    let mut g = GenAgg::new(&DEFAULT_F_WIDTHS, rng, rng::stream(0, rng::STREAM_PROBES));
    g.probes = false;
    v.push(check("genagg forward (train)", &seg_shape, Normal, move |x| {
        let (out, aux) = g.forward_with_aux(&set(x)?, Mode::Train)?;
        out.sum().add(&aux)
    }));
    let pair = MlpPair::with_default_widths(rng);
    v.push(check("inv_loss", &[8], Normal, move |x| {
        inv_loss(&pair, x, Mode::Train)
    }));
    v
}

/// Every differentiable primitive against central differences at `points`
/// random inputs, each through a random linear head.
pub fn verify_primitive_gradients(points: usize, seed: u64) -> Result<Vec<GradRow>> {
    let mut rng = rng::stream(seed, rng::STREAM_PROBES);
    let checks = primitive_checks(&mut rng);
    let mut rows = Vec::with_capacity(checks.len());
    for c in checks {
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let n = c.shape.iter().product();
            let x = Tensor::new(c.shape.clone(), draw(c.domain, n, &mut rng))?;
            let m = (c.op)(&x)?.numel();
            let w = Tensor::new(vec![m], randn(m, &mut rng))?;
            let op = &c.op;
            let err = finite_diff_check(|t| Ok(op(t)?.reshape(vec![m])?.mul(&w)?.sum()), &x, EPS)?;
            worst = worst.max(err);
        }
        rows.push(GradRow {
            name: c.name,
            points,
            max_error: worst,
            tolerance: PRIMITIVE_TOLERANCE,
            passed: worst < PRIMITIVE_TOLERANCE,
        });
    }
    Ok(rows)
}

/// `sum(gnn(g)) + aux` of a GenAgg GNN on a 5-node graph, differentiated
/// with respect to every W₁, W₂, α and β, at `points` random graphs and
/// initialisations.
pub fn verify_gnn_gradients(points: usize, seed: u64) -> Result<GradRow> {
    let mut worst: f64 = 0.0;
    for k in 0..points {
        let s = rng::split(seed, k as u64);
        let mut rng = rng::stream(s, rng::STREAM_INIT);
        let g = random_graph(5, 0.3, 1, s)?;
        let mut scalars = Vec::new();
        let gnn = Gnn::build(
            &[1, 4, 4, 4, 1],
            |layer, _| {
                let mut agg = GenAgg::new(
                    &DEFAULT_F_WIDTHS,
                    &mut rng::stream(s, 10 + layer as u64),
                    rng::stream(s, 20),
                );
                agg.probes = false;
                for t in [&agg.params.alpha, &agg.params.beta] {
                    t.set_data(&[0.3 * randn(1, &mut rng::stream(s, 30 + layer as u64))[0]])
                        .expect("scalar");
                    scalars.push(t.clone());
                }
                Box::new(agg) as Box<dyn Aggregator>
            },
            &mut rng,
        )?;
        let mut params: Vec<Tensor> = gnn.layers.iter().flat_map(|l| [l.w1.clone(), l.w2.clone()]).collect();
        params.extend(scalars);
        let head = || -> Result<Tensor> {
            let (out, aux) = gnn.forward(&g, Mode::Train)?;
            out.sum().add(&aux)
        };
        worst = worst.max(finite_diff_check_params(head, &params, EPS)?);
    }
    Ok(GradRow {
        name: "genagg gnn head".into(),
        points,
        max_error: worst,
        tolerance: GNN_TOLERANCE,
        passed: worst < GNN_TOLERANCE,
    })
}

pub fn verify_gradients(points: usize, seed: u64) -> Result<Vec<GradRow>> {
    let mut rows = verify_primitive_gradients(points, seed)?;
    rows.push(verify_gnn_gradients(points, seed)?);
    Ok(rows)
}
