//! Run configuration: a JSON document with defaults, overridable from the
//! command line (flags win). Unknown keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use cbnn_core::data::ImbalanceSpec;
use cbnn_core::engine::{Method, ScheduleSettings};
use cbnn_core::learner::LearnerConfig;

/// Where the samples come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Comma-separated numeric file; the label column defaults to the last.
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_col: Option<usize>,
    },
    /// Big-endian IDX image/label pair.
    Idx { images: PathBuf, labels: PathBuf },
    /// Seeded Gaussian clusters.
    Blobs {
        #[serde(default = "default_per_class")]
        per_class: usize,
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_per_class() -> usize {
    200
}
fn default_k() -> usize {
    3
}
fn default_dim() -> usize {
    2
}
fn default_spread() -> f64 {
    1.6
}

/// Full description of one training run. Every field has a default except
/// the dataset source.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigDocument {
    pub dataset: DatasetSpec,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Training iterations per checkpoint.
    #[serde(default = "default_t")]
    pub iters_per_checkpoint: usize,
    #[serde(default = "default_total")]
    pub total_iters: usize,
    /// Final-model weight estimate; derived from an assumed 0.05 error rate
    /// when absent.
    #[serde(default)]
    pub lambda0: Option<f64>,
    /// Error-rate clamp; `1 / (2n)` when absent.
    #[serde(default)]
    pub error_floor: Option<f64>,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_base_rate")]
    pub base_rate: f64,
    #[serde(default = "default_decay")]
    pub decay_factor: f64,
    #[serde(default = "default_decay_every")]
    pub decay_every_epochs: usize,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_true")]
    pub stratified: bool,
    /// Optional step-imbalance transform applied to the training split.
    #[serde(default)]
    pub imbalance: Option<ImbalanceSpec>,
    /// Rebalance the training split by random minority oversampling after
    /// the imbalance transform.
    #[serde(default)]
    pub oversample: bool,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; defaults to `<output root>/<method>-seed<seed>`.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_method() -> Method {
    Method::Cbnn
}
fn default_eta() -> f64 {
    0.01
}
fn default_t() -> usize {
    200
}
fn default_total() -> usize {
    1200
}
fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_l2() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    32
}
fn default_base_rate() -> f64 {
    0.05
}
fn default_decay() -> f64 {
    0.96
}
fn default_decay_every() -> usize {
    2
}
fn default_warmup() -> usize {
    5
}
fn default_test_fraction() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}

impl RunConfigDocument {
    pub fn with_dataset(dataset: DatasetSpec) -> Self {
        Self {
            dataset,
            method: default_method(),
            eta: default_eta(),
            iters_per_checkpoint: default_t(),
            total_iters: default_total(),
            lambda0: None,
            error_floor: None,
            hidden: default_hidden(),
            l2: default_l2(),
            batch_size: default_batch(),
            base_rate: default_base_rate(),
            decay_factor: default_decay(),
            decay_every_epochs: default_decay_every(),
            warmup_epochs: default_warmup(),
            test_fraction: default_test_fraction(),
            stratified: true,
            imbalance: None,
            oversample: false,
            seed: 0,
            out_dir: None,
        }
    }

    pub fn learner(&self) -> LearnerConfig {
        LearnerConfig {
            hidden: self.hidden.clone(),
            l2: self.l2,
            batch_size: self.batch_size,
        }
    }

    pub fn schedule(&self) -> ScheduleSettings {
        ScheduleSettings {
            base_rate: self.base_rate,
            decay_factor: self.decay_factor,
            decay_every_epochs: self.decay_every_epochs,
            warmup_epochs: self.warmup_epochs,
        }
    }
}
