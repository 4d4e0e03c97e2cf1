use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregators::StandardAggregator;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    AggregatorRegression,
    GnnRegression,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::AggregatorRegression => "aggregator_regression",
            ExperimentKind::GnnRegression => "gnn_regression",
        }
    }

    pub fn default_feature_dim(self) -> usize {
        match self {
            ExperimentKind::AggregatorRegression => 6,
            ExperimentKind::GnnRegression => 1,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The aggregator used by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "genagg")]
    GenAgg,
    SoftmaxAgg,
    PowerAgg,
    Pna,
    Mean,
    Sum,
    Max,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::GenAgg,
        Method::SoftmaxAgg,
        Method::PowerAgg,
        Method::Pna,
        Method::Mean,
        Method::Sum,
        Method::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::GenAgg => "genagg",
            Method::SoftmaxAgg => "softmax_agg",
            Method::PowerAgg => "power_agg",
            Method::Pna => "pna",
            Method::Mean => "mean",
            Method::Sum => "sum",
            Method::Max => "max",
        }
    }

    pub fn is_learnable(self) -> bool {
        !matches!(self, Method::Mean | Method::Sum | Method::Max)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let m = match key.as_str() {
            "genagg" | "gen_agg" => Method::GenAgg,
            "softmax_agg" | "softmax" | "s_agg" => Method::SoftmaxAgg,
            "power_agg" | "power" | "p_agg" => Method::PowerAgg,
            "pna" => Method::Pna,
            "mean" => Method::Mean,
            "sum" => Method::Sum,
            "max" => Method::Max,
            _ => {
                return Err(Error::UnknownName {
                    kind: "method",
                    name: s.to_string(),
                    valid: Method::ALL.map(Method::name).join(", "),
                })
            }
        };
        Ok(m)
    }
}

/// One regression cell, minus the trial index. Field names double as the JSON
/// config format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub target: StandardAggregator,
    pub method: Method,
    pub n_nodes: usize,
    pub density: f64,
    /// Defaults to 6 for aggregator regression and 1 for GNN regression.
    pub feature_dim: Option<usize>,
    pub epochs: usize,
    pub batch_graphs: usize,
    pub eval_graphs: usize,
    pub lr: f64,
    pub lambda_inv: f64,
    pub seed: u64,
    pub trials: usize,
    /// GNN hidden width.
    pub hidden: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::AggregatorRegression,
            target: StandardAggregator::Mean,
            method: Method::GenAgg,
            n_nodes: 8,
            density: 0.3,
            feature_dim: None,
            epochs: 2000,
            batch_graphs: 256,
            eval_graphs: 128,
            lr: 1e-3,
            lambda_inv: 1.0,
            seed: 0,
            trials: 3,
            hidden: 16,
        }
    }
}

impl ExperimentConfig {
    pub fn aggregator_regression(target: StandardAggregator, method: Method) -> Self {
        Self {
            target,
            method,
            ..Self::default()
        }
    }

    pub fn gnn_regression(target: StandardAggregator, method: Method) -> Self {
        Self {
            experiment: ExperimentKind::GnnRegression,
            target,
            method,
            ..Self::default()
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
            .unwrap_or_else(|| self.experiment.default_feature_dim())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_nodes", self.n_nodes),
            ("epochs", self.epochs),
            ("batch_graphs", self.batch_graphs),
            ("eval_graphs", self.eval_graphs),
            ("trials", self.trials),
            ("hidden", self.hidden),
            ("feature_dim", self.feature_dim()),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_nodes < 2 {
            return Err(Error::Config("n_nodes must be at least 2".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config(format!("density {} outside (0, 1]", self.density)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(self.lambda_inv.is_finite() && self.lambda_inv >= 0.0) {
            return Err(Error::Config(format!(
                "lambda_inv {} must be non-negative",
                self.lambda_inv
            )));
        }
        Ok(())
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
