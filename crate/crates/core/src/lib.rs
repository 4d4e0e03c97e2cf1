//! Learnable aggregation with the augmented f-mean.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense arrays with reverse-mode differentiation, layers and Adam.
//! - [`aggregators`]: the thirteen standard aggregators as direct formulas, plus
//!   the SoftmaxAgg, PowerAgg and PNA baselines.
//! - [`genagg`]: the augmented f-mean in closed-form and MLP form.
//! - [`distributive`]: binary operators that distribute over an f-mean.
//! - [`graph`]: random graphs and a GraphConv stack with pluggable aggregation.
//! - [`experiments`]: regression experiments, metrics and result files.

pub mod aggregators;
pub mod distributive;
pub mod error;
pub mod experiments;
pub mod genagg;
pub mod graph;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
