use std::path::Path;

use serde::Serialize;

use super::config::{ExperimentKind, Method};
use super::metrics::mean_std;
use super::runner::ResultRecord;
use crate::aggregators::StandardAggregator;
use crate::error::Result;

pub const CSV_HEADER: [&str; 8] = ["experiment", "target", "method", "trial", "seed", "r", "mse", "seconds"];

#[derive(Serialize)]
struct CsvRow<'a> {
    experiment: &'a str,
    target: &'a str,
    method: &'a str,
    trial: usize,
    seed: u64,
    r: f64,
    mse: f64,
    seconds: f64,
}

pub fn write_csv<W: std::io::Write>(out: W, records: &[ResultRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRow {
            experiment: r.experiment.name(),
            target: r.target.name(),
            method: r.method.name(),
            trial: r.trial,
            seed: r.seed,
            r: r.r,
            mse: r.mse,
            seconds: r.seconds,
        })?;
    }
    if records.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, records: &[ResultRecord]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, records)
}

pub fn write_json_file(path: &Path, records: &[ResultRecord]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(records)?)?;
    Ok(())
}

/// Trials of one `(experiment, target, method)` pooled.
#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub experiment: ExperimentKind,
    pub target: StandardAggregator,
    pub method: Method,
    pub trials: usize,
    pub r_mean: f64,
    pub r_std: f64,
    pub mse_mean: f64,
    pub seconds: f64,
}

/// Groups in first-seen order.
pub fn summarize(records: &[ResultRecord]) -> Vec<CellSummary> {
    let mut keys: Vec<(ExperimentKind, StandardAggregator, Method)> = Vec::new();
    for r in records {
        let k = (r.experiment, r.target, r.method);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(experiment, target, method)| {
            let group: Vec<&ResultRecord> = records
                .iter()
                .filter(|r| (r.experiment, r.target, r.method) == (experiment, target, method))
                .collect();
            let rs: Vec<f64> = group.iter().map(|r| r.r).collect();
            let (r_mean, r_std) = mean_std(&rs);
            let mses: Vec<f64> = group.iter().map(|r| r.mse).collect();
            CellSummary {
                experiment,
                target,
                method,
                trials: group.len(),
                r_mean,
                r_std,
                mse_mean: mean_std(&mses).0,
                seconds: group.iter().map(|r| r.seconds).sum(),
            }
        })
        .collect()
}

pub fn format_summary(rows: &[CellSummary]) -> String {
    let mut s = format!(
        "{:<22} {:<20} {:<12} {:>6} {:>16} {:>12} {:>9}\n",
        "experiment", "target", "method", "trials", "r (mean ± std)", "mse", "seconds"
    );
    for row in rows {
        s.push_str(&format!(
            "{:<22} {:<20} {:<12} {:>6} {:>8.3} ± {:<5.3} {:>12.4e} {:>9.1}\n",
            row.experiment.name(),
            row.target.name(),
            row.method.name(),
            row.trials,
            row.r_mean,
            row.r_std,
            row.mse_mean,
            row.seconds
        ));
    }
    s
}
