//! Checkpoint-boosted neural network training.
//!
//! Instead of training several networks, a single run is mined for base
//! models: the network is checkpointed every `t` iterations, each checkpoint
//! is weighted by its accuracy on an adaptively reweighted training set, and
//! the misclassified samples gain weight so later checkpoints attack them.
//! The saved checkpoints plus the final model vote as a weighted ensemble
//! whose training exponential loss is provably bounded by the product of the
//! reweighting normalizers.
//!
//! Module map:
//!
//! - [`boost`] - sample-weight state, checkpoint weighting, budget rule,
//!   combination, and the loss bound
//! - [`learner`] - the softmax MLP, weighted loss, gradients, and schedules
//! - [`data`] - loading, synthetic blobs, splits, and imbalance transforms
//! - [`engine`] - the boosted run driver and baselines
//! - [`metrics`] - correlation, per-class weights, loss surfaces, priors
//! - [`persist`] - checkpoint files and run manifests

pub mod boost;
pub mod data;
pub mod engine;
pub mod learner;
pub mod metrics;
pub(crate) mod numeric;
pub mod persist;

pub use boost::{BoostConfig, CheckpointRecord, EnsembleModel, SampleWeights};
pub use data::{Dataset, ImbalanceSpec};
pub use engine::{Method, RunRecord, ScheduleSettings};
pub use learner::{LearnerConfig, LrSchedule, MlpParams, TrainState};
