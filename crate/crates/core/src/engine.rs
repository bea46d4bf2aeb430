//! Run drivers: the checkpoint-boosted training loop, the single-model and
//! horizontal-voting baselines, and equal-interval checkpoint selection.
//!
//! The boosted loop alternates training segments with full-training-set
//! evaluation. After each segment the candidate checkpoint is scored on the
//! weighted training set; a positive weight saves it and reweights the
//! samples, a non-positive weight discards it and training simply continues.
//! The loop stops when either the iteration budget or the weight budget
//! `1/eta` (counting the final-model estimate) runs out, then the final
//! model absorbs every remaining iteration.

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boost::{
    self, BoostConfig, CheckpointRecord, CheckpointWeight, EnsembleModel, SampleWeights,
};
use crate::data::Dataset;
use crate::learner::{
    self, LearnerConfig, LearnerError, LrSchedule, MlpParams, TrainState,
};
use crate::metrics;
use crate::numeric::compensated_sum;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("training diverged at step {step}")]
    Diverged { step: u64, record: Box<RunRecord> },
    #[error("final model rejected: weighted error {error} gives non-positive weight")]
    FinalModelRejected { error: f64, record: Box<RunRecord> },
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Boost(#[from] crate::boost::BoostError),
    #[error(transparent)]
    Learner(LearnerError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Training mode of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cbnn,
    Single,
    Horizontal,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Cbnn => "cbnn",
            Method::Single => "single",
            Method::Horizontal => "horizontal",
        };
        f.write_str(s)
    }
}

/// Learning-rate settings without the data-dependent steps-per-epoch; the
/// drivers complete them once the training set size is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSettings {
    pub base_rate: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
    pub warmup_epochs: usize,
}

impl Default for ScheduleSettings {
    fn default() -> Self {
        Self {
            base_rate: 0.05,
            decay_factor: 0.96,
            decay_every_epochs: 2,
            warmup_epochs: 5,
        }
    }
}

impl ScheduleSettings {
    pub fn for_dataset(&self, n: usize, batch_size: usize) -> LrSchedule {
        LrSchedule {
            base_rate: self.base_rate,
            decay_factor: self.decay_factor,
            decay_every_epochs: self.decay_every_epochs,
            warmup_epochs: self.warmup_epochs,
            steps_per_epoch: n.div_ceil(batch_size),
        }
    }
}

/// Per-checkpoint statistics frozen into the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Training iteration at save time.
    pub step: u64,
    /// Mixing weight.
    pub lambda: f64,
    /// Weighted training error at save time.
    pub error: f64,
    /// Normalizer value for this checkpoint.
    pub z: f64,
    /// Weight-budget total (estimate plus accepted weights) before this
    /// checkpoint was accepted. Zero for baseline methods.
    pub budget_before: f64,
    /// Unweighted training error of this member alone.
    pub train_error: f64,
    /// Unweighted test error of this member alone, when a test set is given.
    pub test_error: Option<f64>,
    /// Exponential loss of the running ensemble up to this member, on the
    /// training set.
    pub ensemble_exp_loss: f64,
    /// Product of normalizers up to and including this member.
    pub bound: f64,
    /// Checkpoint file name within a saved run directory.
    pub file: String,
}

/// Everything recorded about one run except the parameters themselves.
///
/// Wall-clock segment timings are kept out of the serialized form so that
/// identical configurations produce byte-identical manifests; they are
/// persisted separately.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub dataset: String,
    pub seed: u64,
    /// Deviation rate; zero for baseline methods.
    pub eta: f64,
    /// Final-model weight estimate; zero for baseline methods.
    pub lambda0: f64,
    /// Resolved error floor; zero for baseline methods.
    pub error_floor: f64,
    pub iters_per_checkpoint: usize,
    pub total_iters: usize,
    pub classes: usize,
    pub learner: LearnerConfig,
    pub schedule: LrSchedule,
    /// Class counts of the training set (the priors used for thresholding).
    pub train_class_counts: Vec<usize>,
    pub checkpoints: Vec<CheckpointMeta>,
    /// Normalizers of the weight updates actually performed; the final model
    /// never triggers an update, so this is one shorter than `checkpoints`
    /// on boosted runs.
    pub z_history: Vec<f64>,
    /// Sample weights after the last update.
    pub final_weights: Vec<f64>,
    /// Steps at which a candidate checkpoint was rejected.
    pub rejected_steps: Vec<u64>,
    /// Wall-clock seconds per training segment (not serialized).
    #[serde(skip)]
    pub segment_seconds: Vec<f64>,
}

/// Incrementally maintained ensemble outputs on the training set, so the
/// running exponential loss costs one member evaluation per checkpoint.
struct RunningEnsemble {
    /// Sum of `lambda_m * onehot_m` rows.
    acc: Array2<f64>,
    lambda_sum: f64,
}

impl RunningEnsemble {
    fn new(n: usize, k: usize) -> Self {
        Self {
            acc: Array2::zeros((n, k)),
            lambda_sum: 0.0,
        }
    }

    fn push(&mut self, classes: &[usize], lambda: f64) {
        for (i, &c) in classes.iter().enumerate() {
            self.acc[[i, c]] += lambda;
        }
        self.lambda_sum += lambda;
    }

    fn exp_loss(&self, labels: &[usize]) -> f64 {
        let scores: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| self.acc[[i, y]] / self.lambda_sum)
            .collect();
        boost::exp_loss(&scores).expect("non-empty training set")
    }
}

fn correctness(classes: &[usize], labels: &[usize]) -> Vec<bool> {
    classes.iter().zip(labels).map(|(p, l)| p == l).collect()
}

fn member_eval(
    params: &MlpParams,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<(Vec<usize>, f64, Option<f64>), LearnerError> {
    let classes = learner::predict_classes(params, train.features().view())?;
    let train_error = metrics::error_rate_classes(&classes, train.labels());
    let test_error = match test {
        Some(ts) => {
            let tc = learner::predict_classes(params, ts.features().view())?;
            Some(metrics::error_rate_classes(&tc, ts.labels()))
        }
        None => None,
    };
    Ok((classes, train_error, test_error))
}

struct RecordSkeleton {
    record: RunRecord,
}

impl RecordSkeleton {
    fn wrap_learner(&mut self, err: LearnerError, step: u64) -> EngineError {
        match err {
            LearnerError::Diverged { .. } => EngineError::Diverged {
                step,
                record: Box::new(self.record.clone()),
            },
            other => EngineError::Learner(other),
        }
    }
}

/// Runs the boosted training procedure and returns the resulting ensemble
/// together with its run record.
pub fn run_cbnn(
    train: &Dataset,
    test: Option<&Dataset>,
    boost_cfg: &BoostConfig,
    learner_cfg: &LearnerConfig,
    sched: &ScheduleSettings,
    seed: u64,
) -> Result<(EnsembleModel, RunRecord), EngineError> {
    boost_cfg.validate()?;
    learner_cfg.validate().map_err(EngineError::Learner)?;
    if boost_cfg.classes != train.k() {
        return Err(EngineError::ConfigMismatch(format!(
            "config expects {} classes but the dataset has {}",
            boost_cfg.classes,
            train.k()
        )));
    }

    let n = train.len();
    let k = train.k();
    let t = boost_cfg.iters_per_checkpoint;
    let total = boost_cfg.total_iters;
    let eta = boost_cfg.eta;
    let floor = boost_cfg.resolved_error_floor(n);
    let schedule = sched.for_dataset(n, learner_cfg.batch_size);
    schedule.validate().map_err(EngineError::Learner)?;

    let params = MlpParams::init(
        &learner_cfg.layer_sizes(train.dim(), k),
        learner_cfg.l2,
        seed,
    )
    .map_err(EngineError::Learner)?;
    let mut state = TrainState::new(params, seed);
    let mut weights = SampleWeights::uniform(n)?;
    let mut budget = vec![boost_cfg.lambda0];
    let mut records: Vec<CheckpointRecord> = Vec::new();
    let mut running = RunningEnsemble::new(n, k);
    let mut skeleton = RecordSkeleton {
        record: RunRecord {
            method: Method::Cbnn,
            dataset: train.name().to_string(),
            seed,
            eta,
            lambda0: boost_cfg.lambda0,
            error_floor: floor,
            iters_per_checkpoint: t,
            total_iters: total,
            classes: k,
            learner: learner_cfg.clone(),
            schedule: schedule.clone(),
            train_class_counts: train.class_counts(),
            checkpoints: Vec::new(),
            z_history: Vec::new(),
            final_weights: weights.values().to_vec(),
            rejected_steps: Vec::new(),
            segment_seconds: Vec::new(),
        },
    };

    let mut segments = 0usize;
    let mut trained = 0usize;
    while total > (segments + 1) * t && boost::budget_allows(&budget, eta) {
        let iters = t.min(total - (segments + 1) * t);
        let started = Instant::now();
        learner::train_segment(&mut state, train, &weights, iters, learner_cfg.batch_size, &schedule)
            .map_err(|e| skeleton.wrap_learner(e, state.step))?;
        skeleton
            .record
            .segment_seconds
            .push(started.elapsed().as_secs_f64());
        trained += iters;
        segments += 1;

        let (classes, train_error, test_error) =
            member_eval(&state.params, train, test).map_err(EngineError::Learner)?;
        let correct = correctness(&classes, train.labels());
        let error = weights.weighted_error(&correct)?;
        match boost::checkpoint_weight(error, k, floor)? {
            CheckpointWeight::Rejected { .. } => {
                skeleton.record.rejected_steps.push(state.step);
            }
            CheckpointWeight::Accepted(lambda) => {
                let budget_before = compensated_sum(budget.iter().copied());
                debug_assert!(budget_before < 1.0 / eta);
                let (next, z) = weights.update(&correct, eta, lambda)?;
                weights = next;
                budget.push(lambda);
                running.push(&classes, lambda);

                let record =
                    CheckpointRecord::new(state.params.clone(), lambda, error, z, state.step)?;
                skeleton.record.z_history.push(z);
                let bound = boost::loss_bound(&skeleton.record.z_history);
                skeleton.record.checkpoints.push(CheckpointMeta {
                    step: state.step,
                    lambda,
                    error,
                    z,
                    budget_before,
                    train_error,
                    test_error,
                    ensemble_exp_loss: running.exp_loss(train.labels()),
                    bound,
                    file: format!("ckpt_{}.bin", records.len()),
                });
                records.push(record);
            }
        }
    }

    // Final model: every remaining iteration, never fewer than one segment.
    let final_iters = t.max(total.saturating_sub(segments * t));
    debug_assert_eq!(final_iters, total - trained);
    let started = Instant::now();
    learner::train_segment(
        &mut state,
        train,
        &weights,
        final_iters,
        learner_cfg.batch_size,
        &schedule,
    )
    .map_err(|e| skeleton.wrap_learner(e, state.step))?;
    skeleton
        .record
        .segment_seconds
        .push(started.elapsed().as_secs_f64());
    trained += final_iters;
    debug_assert_eq!(trained, total);

    let (classes, train_error, test_error) =
        member_eval(&state.params, train, test).map_err(EngineError::Learner)?;
    let correct = correctness(&classes, train.labels());
    let error = weights.weighted_error(&correct)?;
    let lambda = match boost::checkpoint_weight(error, k, floor)? {
        CheckpointWeight::Accepted(lambda) => lambda,
        CheckpointWeight::Rejected { .. } => {
            return Err(EngineError::FinalModelRejected {
                error,
                record: Box::new(skeleton.record),
            });
        }
    };
    // The final model joins the ensemble without a weight update; its
    // normalizer comes straight from the closed form.
    let z = boost::closed_form_z(error, eta, lambda);
    let final_step = state.step;
    running.push(&classes, lambda);
    let budget_before = compensated_sum(budget.iter().copied());
    let mut all_z: Vec<f64> = skeleton.record.z_history.clone();
    all_z.push(z);
    skeleton.record.checkpoints.push(CheckpointMeta {
        step: final_step,
        lambda,
        error,
        z,
        budget_before,
        train_error,
        test_error,
        ensemble_exp_loss: running.exp_loss(train.labels()),
        bound: boost::loss_bound(&all_z),
        file: format!("ckpt_{}.bin", records.len()),
    });
    records.push(CheckpointRecord::new(
        state.params,
        lambda,
        error,
        z,
        final_step,
    )?);

    skeleton.record.final_weights = weights.values().to_vec();
    let ensemble = EnsembleModel::new(records)?;
    Ok((ensemble, skeleton.record))
}

/// Plain training for `total_iters` iterations with uniform sample weights;
/// the "ensemble" is the final model alone, carrying unit weight.
pub fn run_single(
    train: &Dataset,
    test: Option<&Dataset>,
    learner_cfg: &LearnerConfig,
    sched: &ScheduleSettings,
    total_iters: usize,
    seed: u64,
) -> Result<(EnsembleModel, RunRecord), EngineError> {
    run_uniform_snapshots(train, test, learner_cfg, sched, total_iters, total_iters, seed, Method::Single)
}

/// Same trajectory as [`run_single`], but a snapshot is kept every
/// `iters_per_snapshot` iterations and the members vote with equal weight.
pub fn run_horizontal_voting(
    train: &Dataset,
    test: Option<&Dataset>,
    learner_cfg: &LearnerConfig,
    sched: &ScheduleSettings,
    total_iters: usize,
    iters_per_snapshot: usize,
    seed: u64,
) -> Result<(EnsembleModel, RunRecord), EngineError> {
    run_uniform_snapshots(
        train,
        test,
        learner_cfg,
        sched,
        total_iters,
        iters_per_snapshot,
        seed,
        Method::Horizontal,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_uniform_snapshots(
    train: &Dataset,
    test: Option<&Dataset>,
    learner_cfg: &LearnerConfig,
    sched: &ScheduleSettings,
    total_iters: usize,
    iters_per_snapshot: usize,
    seed: u64,
    method: Method,
) -> Result<(EnsembleModel, RunRecord), EngineError> {
    learner_cfg.validate().map_err(EngineError::Learner)?;
    if total_iters == 0 || iters_per_snapshot == 0 {
        return Err(EngineError::InvalidArgument(
            "iteration counts must be positive".into(),
        ));
    }
    let n = train.len();
    let k = train.k();
    let schedule = sched.for_dataset(n, learner_cfg.batch_size);
    schedule.validate().map_err(EngineError::Learner)?;
    let params = MlpParams::init(
        &learner_cfg.layer_sizes(train.dim(), k),
        learner_cfg.l2,
        seed,
    )
    .map_err(EngineError::Learner)?;
    let mut state = TrainState::new(params, seed);
    let weights = SampleWeights::uniform(n)?;
    let mut running = RunningEnsemble::new(n, k);
    let mut records = Vec::new();
    let mut skeleton = RecordSkeleton {
        record: RunRecord {
            method,
            dataset: train.name().to_string(),
            seed,
            eta: 0.0,
            lambda0: 0.0,
            error_floor: 0.0,
            iters_per_checkpoint: iters_per_snapshot,
            total_iters,
            classes: k,
            learner: learner_cfg.clone(),
            schedule: schedule.clone(),
            train_class_counts: train.class_counts(),
            checkpoints: Vec::new(),
            z_history: Vec::new(),
            final_weights: weights.values().to_vec(),
            rejected_steps: Vec::new(),
            segment_seconds: Vec::new(),
        },
    };

    let mut trained = 0usize;
    while trained < total_iters {
        let iters = iters_per_snapshot.min(total_iters - trained);
        let started = Instant::now();
        learner::train_segment(&mut state, train, &weights, iters, learner_cfg.batch_size, &schedule)
            .map_err(|e| skeleton.wrap_learner(e, state.step))?;
        skeleton
            .record
            .segment_seconds
            .push(started.elapsed().as_secs_f64());
        trained += iters;

        let (classes, train_error, test_error) =
            member_eval(&state.params, train, test).map_err(EngineError::Learner)?;
        running.push(&classes, 1.0);
        skeleton.record.checkpoints.push(CheckpointMeta {
            step: state.step,
            lambda: 1.0,
            error: train_error,
            z: 1.0,
            budget_before: 0.0,
            train_error,
            test_error,
            ensemble_exp_loss: running.exp_loss(train.labels()),
            bound: 1.0,
            file: format!("ckpt_{}.bin", records.len()),
        });
        records.push(CheckpointRecord::new(
            state.params.clone(),
            1.0,
            train_error,
            1.0,
            state.step,
        )?);
    }

    let ensemble = EnsembleModel::new(records)?;
    Ok((ensemble, skeleton.record))
}

/// Picks `count` members at as-equal-as-possible spacing, always keeping the
/// final model. With members ranked 1..=M, the selection takes ranks
/// `floor(i * M / count)` for `i = 1..count` (the last of which is M itself)
/// and renormalizes the mixing weights.
pub fn select_checkpoints(
    ensemble: &EnsembleModel,
    count: usize,
) -> Result<EnsembleModel, EngineError> {
    let m = ensemble.len();
    if count == 0 {
        return Err(EngineError::InvalidArgument(
            "selection count must be at least 1".into(),
        ));
    }
    if count > m {
        return Err(EngineError::InvalidArgument(format!(
            "selection count {count} exceeds the {m} saved checkpoints"
        )));
    }
    let mut picked: Vec<CheckpointRecord> = (1..count)
        .map(|i| ensemble.members()[i * m / count - 1].clone())
        .collect();
    picked.push(ensemble.members()[m - 1].clone());
    Ok(EnsembleModel::new(picked)?)
}

/// Combined ensemble predictions for every row of a dataset.
pub fn ensemble_predictions(
    ensemble: &EnsembleModel,
    dataset: &Dataset,
) -> Result<Array2<f64>, EngineError> {
    let k = ensemble.members()[0].params.output_dim();
    let n = dataset.len();
    let mut acc = Array2::<f64>::zeros((n, k));
    for (record, &w) in ensemble.members().iter().zip(ensemble.normalized_weights()) {
        let classes = learner::predict_classes(&record.params, dataset.features().view())
            .map_err(EngineError::Learner)?;
        for (i, c) in classes.into_iter().enumerate() {
            acc[[i, c]] += w;
        }
    }
    Ok(acc)
}

/// Ensemble exponential loss over a dataset: mean of `exp(-score)` where the
/// score is the combined probability assigned to the true class.
pub fn ensemble_exp_loss(
    ensemble: &EnsembleModel,
    dataset: &Dataset,
) -> Result<f64, EngineError> {
    let predictions = ensemble_predictions(ensemble, dataset)?;
    let scores: Vec<f64> = dataset
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &y)| predictions[[i, y]])
        .collect();
    Ok(boost::exp_loss(&scores)?)
}
