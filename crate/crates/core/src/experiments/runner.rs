use std::path::PathBuf;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind, Method};
use super::dataset::{sample_batch, Batch};
use super::metrics::{mse, pearson};
use crate::aggregators::{
    Aggregator, FixedAggregator, PnaAggregator, PowerAggregator, SoftmaxAggregator, StandardAggregator,
};
use crate::error::{Error, Result};
use crate::genagg::{inv_loss, GenAgg, DEFAULT_F_WIDTHS};
use crate::graph::Gnn;
use crate::rng::{self, Rng};
use crate::tensor::{randn, Adam, Mode, ReduceKind, Tensor};

/// Size of the fresh N(0,1) batch used to measure invertibility after
/// training.
pub const PROBE_BATCH: usize = 4096;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub data: f64,
    pub forward: f64,
    pub backward: f64,
    pub eval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub experiment: ExperimentKind,
    pub target: StandardAggregator,
    pub method: Method,
    pub trial: usize,
    pub seed: u64,
    /// One entry per epoch.
    pub train_loss: Vec<f64>,
    pub r: f64,
    pub mse: f64,
    pub seconds: f64,
    /// Mean `inv_loss` of the trained GenAgg modules on fresh N(0,1) inputs.
    pub probe_inv_loss: Option<f64>,
    pub timings: PhaseTimings,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Write the trained GenAgg parameters of aggregator-regression cells here.
    pub checkpoint_dir: Option<PathBuf>,
    /// Print the training loss to stderr every `n` epochs (0 = never).
    pub log_every: usize,
}

/// Seed of trial `trial`. Every method sees the same data for a given trial.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    rng::split(base, trial as u64)
}

fn build_aggregator(
    method: Method,
    d: usize,
    init: &mut Rng,
    probe_seed: u64,
) -> (Box<dyn Aggregator>, Option<Rc<GenAgg>>) {
    match method {
        Method::GenAgg => {
            let g = Rc::new(GenAgg::new(
                &DEFAULT_F_WIDTHS,
                init,
                rng::stream(probe_seed, rng::STREAM_PROBES),
            ));
            (Box::new(g.clone()), Some(g))
        }
        Method::SoftmaxAgg => (Box::new(SoftmaxAggregator::default()), None),
        Method::PowerAgg => (Box::new(PowerAggregator::default()), None),
        Method::Pna => (Box::new(PnaAggregator::new(d, init)), None),
        Method::Mean => (Box::new(FixedAggregator::new(ReduceKind::Mean)), None),
        Method::Sum => (Box::new(FixedAggregator::new(ReduceKind::Sum)), None),
        Method::Max => (Box::new(FixedAggregator::new(ReduceKind::Max)), None),
    }
}

enum Model {
    Single(Box<dyn Aggregator>),
    Gnn(Gnn),
}

impl Model {
    fn forward(&self, batch: &Batch, mode: Mode) -> Result<(Tensor, Tensor)> {
        match self {
            Model::Single(agg) => {
                let a = agg.forward(&batch.x, mode)?;
                Ok((a.out, a.aux.unwrap_or_else(|| Tensor::scalar(0.0))))
            }
            Model::Gnn(gnn) => gnn.forward(&batch.graph, mode),
        }
    }

    fn parameters(&self) -> Vec<Tensor> {
        match self {
            Model::Single(agg) => agg.parameters(),
            Model::Gnn(gnn) => gnn.parameters(),
        }
    }
}

/// The model of `cfg` plus handles to every GenAgg module inside it.
fn build_model(cfg: &ExperimentConfig) -> Result<(Model, Vec<Rc<GenAgg>>)> {
    let d = cfg.feature_dim();
    let mut init = rng::stream(cfg.seed, rng::STREAM_INIT);
    let mut genaggs = Vec::new();
    let model = match cfg.experiment {
        ExperimentKind::AggregatorRegression => {
            let (agg, g) = build_aggregator(cfg.method, d, &mut init, cfg.seed);
            genaggs.extend(g);
            Model::Single(agg)
        }
        ExperimentKind::GnnRegression => {
            let h = cfg.hidden;
            let dims = [d, h, h, h, d];
            let mut agg_rng = rng::stream(rng::split(cfg.seed, 1), rng::STREAM_INIT);
            let gnn = Gnn::build(
                &dims,
                |layer, width| {
                    let (agg, g) = build_aggregator(
                        cfg.method,
                        width,
                        &mut agg_rng,
                        rng::split(cfg.seed, 100 + layer as u64),
                    );
                    genaggs.extend(g);
                    agg
                },
                &mut init,
            )?;
            Model::Gnn(gnn)
        }
    };
    Ok((model, genaggs))
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Trains and evaluates one cell. `cfg.seed` is used as is; see
/// [`run_trial`] for the per-trial seed.
pub fn run_experiment(cfg: &ExperimentConfig, trial: usize, opts: &RunOptions) -> Result<ResultRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let mut timings = PhaseTimings::default();
    let d = cfg.feature_dim();
    let (model, genaggs) = build_model(cfg)?;
    let params = model.parameters();
    let mut opt = Adam::new(params.clone(), cfg.lr);
    let mut train_rng = rng::stream(cfg.seed, rng::STREAM_TRAIN);

    let mut train_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let t = Instant::now();
        let batch = sample_batch(
            cfg.batch_graphs,
            cfg.n_nodes,
            cfg.density,
            d,
            cfg.target,
            &mut train_rng,
        )?;
        timings.data += secs(t.elapsed());

        let t = Instant::now();
        let (pred, aux) = model.forward(&batch, Mode::Train)?;
        let loss = mse(&pred, &batch.y)?.add(&aux.mul_scalar(cfg.lambda_inv))?;
        let l = loss.item();
        timings.forward += secs(t.elapsed());
        if !l.is_finite() {
            return Err(Error::Diverged { epoch, loss: l });
        }
        if !params.is_empty() {
            let t = Instant::now();
            loss.backward()?;
            opt.step()?;
            timings.backward += secs(t.elapsed());
        }
        train_loss.push(l);
        if opts.log_every > 0 && (epoch + 1) % opts.log_every == 0 {
            eprintln!(
                "[{} {} {} trial {trial}] epoch {:>5} loss {l:.6}",
                cfg.experiment,
                cfg.target,
                cfg.method,
                epoch + 1
            );
        }
    }

    let t = Instant::now();
    let mut eval_rng = rng::stream(cfg.seed, rng::STREAM_EVAL);
    let batch = sample_batch(cfg.eval_graphs, cfg.n_nodes, cfg.density, d, cfg.target, &mut eval_rng)?;
    let (pred, _) = model.forward(&batch, Mode::Eval)?;
    let r = pearson(&pred, &batch.y)?;
    let eval_mse = mse(&pred, &batch.y)?.item();

    let probe_inv_loss = if genaggs.is_empty() {
        None
    } else {
        let mut probe_rng = rng::stream(rng::split(cfg.seed, 2), rng::STREAM_PROBES);
        let mut total = 0.0;
        for g in &genaggs {
            let x = Tensor::new(vec![PROBE_BATCH], randn(PROBE_BATCH, &mut probe_rng))?;
            total += inv_loss(g.pair(), &x, Mode::Eval)?.item();
        }
        Some(total / genaggs.len() as f64)
    };
    timings.eval += secs(t.elapsed());

    if let (Some(dir), ExperimentKind::AggregatorRegression, Some(g)) =
        (&opts.checkpoint_dir, cfg.experiment, genaggs.first())
    {
        std::fs::create_dir_all(dir)?;
        let name = format!("{}_{}_trial{trial}.json", cfg.target, cfg.hash());
        g.to_checkpoint(&cfg.hash()).save(&dir.join(name))?;
    }

    Ok(ResultRecord {
        config_hash: cfg.hash(),
        experiment: cfg.experiment,
        target: cfg.target,
        method: cfg.method,
        trial,
        seed: cfg.seed,
        train_loss,
        r,
        mse: eval_mse,
        seconds: secs(start.elapsed()),
        probe_inv_loss,
        timings,
    })
}

/// Trial `trial` of `cfg`, seeded with [`trial_seed`].
pub fn run_trial(cfg: &ExperimentConfig, trial: usize, opts: &RunOptions) -> Result<ResultRecord> {
    let cell = ExperimentConfig {
        seed: trial_seed(cfg.seed, trial),
        ..cfg.clone()
    };
    run_experiment(&cell, trial, opts)
}

pub fn run_aggregator_regression(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    let cfg = ExperimentConfig {
        experiment: ExperimentKind::AggregatorRegression,
        ..cfg.clone()
    };
    run_experiment(&cfg, 0, &RunOptions::default())
}

pub fn run_gnn_regression(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    let cfg = ExperimentConfig {
        experiment: ExperimentKind::GnnRegression,
        ..cfg.clone()
    };
    run_experiment(&cfg, 0, &RunOptions::default())
}

/// One `(config, trial)` per target, method and trial, in that nesting order.
pub fn expand_cells(
    base: &ExperimentConfig,
    targets: &[StandardAggregator],
    methods: &[Method],
) -> Vec<(ExperimentConfig, usize)> {
    let mut cells = Vec::new();
    for &target in targets {
        for &method in methods {
            let cfg = ExperimentConfig {
                target,
                method,
                ..base.clone()
            };
            for trial in 0..base.trials {
                cells.push((cfg.clone(), trial));
            }
        }
    }
    cells
}

/// Runs cells on `jobs` worker threads. Each worker builds its own model, so
/// nothing is shared beyond the configs; results come back in cell order.
pub fn run_cells(cells: &[(ExperimentConfig, usize)], jobs: usize, opts: &RunOptions) -> Vec<Result<ResultRecord>> {
    let jobs = jobs.clamp(1, cells.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<ResultRecord>>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((cfg, trial)) = cells.get(i) else {
                    break;
                };
                let res = run_trial(cfg, *trial, opts);
                slots.lock().expect("no worker panicked")[i] = Some(res);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(method: Method, target: StandardAggregator) -> ExperimentConfig {
        ExperimentConfig {
            epochs: 3,
            batch_graphs: 4,
            eval_graphs: 8,
            trials: 1,
            ..ExperimentConfig::aggregator_regression(target, method)
        }
    }

    #[test]
    fn mean_on_mean_is_exact() {
        let rec = run_aggregator_regression(&tiny(Method::Mean, StandardAggregator::Mean)).unwrap();
        assert!((rec.r - 1.0).abs() < 1e-12);
        assert_eq!(rec.train_loss.len(), 3);
    }

    #[test]
    fn every_method_runs_both_experiments() {
        for m in Method::ALL {
            let cfg = tiny(m, StandardAggregator::Max);
            let rec = run_aggregator_regression(&cfg).unwrap();
            assert!(rec.r.abs() <= 1.0);
            assert_eq!(rec.probe_inv_loss.is_some(), m == Method::GenAgg);
            let g = ExperimentConfig { hidden: 4, ..cfg };
            let rec = run_gnn_regression(&g).unwrap();
            assert!(rec.r.abs() <= 1.0, "{m}");
        }
    }

    #[test]
    fn reproducible() {
        let cfg = tiny(Method::GenAgg, StandardAggregator::Product);
        let a = run_trial(&cfg, 1, &RunOptions::default()).unwrap();
        let b = run_trial(&cfg, 1, &RunOptions::default()).unwrap();
        assert_eq!(a.train_loss, b.train_loss);
        assert_eq!(a.r.to_bits(), b.r.to_bits());
        assert_eq!(a.seed, b.seed);
    }

    #[test]
    fn pool_preserves_order() {
        let cfg = tiny(Method::Mean, StandardAggregator::Sum);
        let cells = expand_cells(
            &ExperimentConfig { trials: 2, ..cfg },
            &[StandardAggregator::Sum, StandardAggregator::Max],
            &[Method::Mean],
        );
        let out = run_cells(&cells, 3, &RunOptions::default());
        let order: Vec<(StandardAggregator, usize)> = out
            .iter()
            .map(|r| {
                let r = r.as_ref().unwrap();
                (r.target, r.trial)
            })
            .collect();
        assert_eq!(
            order,
            vec![
                (StandardAggregator::Sum, 0),
                (StandardAggregator::Sum, 1),
                (StandardAggregator::Max, 0),
                (StandardAggregator::Max, 1)
            ]
        );
    }
}
