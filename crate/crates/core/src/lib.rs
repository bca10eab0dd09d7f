//! Distributed Gaussian process regression by product-of-experts fusion,
//! aggregated over a simulated over-the-air computation channel.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod linalg;
pub mod poe;
pub mod radiomap;
pub mod seed;
pub mod trainer;

pub use channel::{ChannelParams, CsiMode, FadingModel, PowerPolicy};
pub use error::{Error, Result};
pub use experiment::{uplink_cost, CostModel, ExperimentSpec, SweepParam};
pub use gp::{Hyperparams, LocalDataset, PredictionResult};
pub use poe::{ExpertPool, LocalPrediction, PartitionStrategy};
pub use radiomap::{Method, ScenarioConfig};
pub use trainer::{TrainConfig, TrainResult, TrainingMode};
