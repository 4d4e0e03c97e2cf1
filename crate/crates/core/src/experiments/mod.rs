//! Aggregator regression and GNN regression: random neighbourhoods labelled
//! by a standard aggregator, a model built around a parametrised aggregator,
//! and Pearson correlation on held-out graphs.

mod config;
mod dataset;
mod gradients;
mod metrics;
mod output;
mod runner;
mod verify;

pub use config::{ExperimentConfig, ExperimentKind, Method};
pub use dataset::{experiment_target, gen_dataset, sample_batch, Batch};
pub use gradients::{
    verify_gnn_gradients, verify_gradients, verify_primitive_gradients, GradRow, GNN_TOLERANCE, PRIMITIVE_TOLERANCE,
};
pub use metrics::{mean_std, mse, pearson, pearson_slices};
pub use output::{format_summary, summarize, write_csv, write_csv_file, write_json_file, CellSummary, CSV_HEADER};
pub use runner::{
    expand_cells, run_aggregator_regression, run_cells, run_experiment, run_gnn_regression, run_trial, trial_seed,
    PhaseTimings, ResultRecord, RunOptions, PROBE_BATCH,
};
pub use verify::{
    compare_row, negative_control, random_sets, verify_parametrisations, ParametrisationRow, PARAMETRISATION_TOLERANCE,
};
