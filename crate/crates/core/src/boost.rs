//! Boosting mathematics for checkpoint ensembles.
//!
//! A single training run is treated as a source of base models: every `t`
//! iterations the current network becomes a candidate checkpoint, receives a
//! weight from its error rate on the (sample-weighted) training set, and the
//! sample weights are pushed towards whatever it misclassified. This module
//! owns that state: the weight simplex over training samples, checkpoint
//! weighting and rejection, the weight-budget stopping rule, ensemble
//! combination, and the exponential-loss bound that certifies convergence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::MlpParams;
use crate::numeric::compensated_sum;

/// Absolute tolerance on the sample-weight simplex sum.
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BoostError {
    #[error("sample count must be at least 1")]
    EmptySampleSet,
    #[error("length mismatch: {weights} weights vs {outcomes} outcomes")]
    LengthMismatch { weights: usize, outcomes: usize },
    #[error("class count must be at least 2, got {0}")]
    TooFewClasses(usize),
    #[error("error rate {0} is outside [0, 1]")]
    ErrorRateOutOfRange(f64),
    #[error("error floor {0} must lie in (0, 0.5)")]
    BadErrorFloor(f64),
    #[error("checkpoint weight must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("deviation rate must be positive, got {0}")]
    NonPositiveEta(f64),
    #[error("invalid sample weights: {0}")]
    InvalidWeights(String),
    #[error("ensemble needs at least one checkpoint")]
    EmptyEnsemble,
    #[error("score vector must be non-empty")]
    EmptyScores,
    #[error("invalid boost config: {0}")]
    InvalidConfig(String),
}

/// Probability vector over the training samples.
///
/// Invariants: every entry is strictly positive and the entries sum to one
/// within [`SIMPLEX_TOL`]. Constructors enforce this; updates preserve it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights {
    values: Vec<f64>,
}

impl SampleWeights {
    /// Uniform initialization: `n` entries of exactly `1/n`.
    pub fn uniform(n: usize) -> Result<Self, BoostError> {
        if n == 0 {
            return Err(BoostError::EmptySampleSet);
        }
        Ok(Self {
            values: vec![1.0 / n as f64; n],
        })
    }

    /// Wraps an existing vector, validating the simplex invariants.
    pub fn from_values(values: Vec<f64>) -> Result<Self, BoostError> {
        if values.is_empty() {
            return Err(BoostError::EmptySampleSet);
        }
        if let Some(w) = values.iter().find(|w| !w.is_finite() || **w <= 0.0) {
            return Err(BoostError::InvalidWeights(format!(
                "entry {w} is not strictly positive"
            )));
        }
        let sum = compensated_sum(values.iter().copied());
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(BoostError::InvalidWeights(format!(
                "sum {sum} deviates from 1 by more than {SIMPLEX_TOL}"
            )));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Weight mass on misclassified samples: `sum_i w_i * [i wrong]`.
    ///
    /// `correct[i]` is true when sample `i` was classified correctly.
    pub fn weighted_error(&self, correct: &[bool]) -> Result<f64, BoostError> {
        if correct.len() != self.values.len() {
            return Err(BoostError::LengthMismatch {
                weights: self.values.len(),
                outcomes: correct.len(),
            });
        }
        let e = compensated_sum(
            self.values
                .iter()
                .zip(correct)
                .filter(|(_, &c)| !c)
                .map(|(w, _)| *w),
        );
        Ok(e.clamp(0.0, 1.0))
    }

    /// Multiplicative reweighting after a checkpoint is accepted.
    ///
    /// Correctly classified samples are scaled by `exp(-eta * lambda)`,
    /// misclassified ones are left alone, and the vector is renormalized by
    /// the sum `z` of the scaled entries. Returns the new weights together
    /// with `z`, which equals `(1 - e) * exp(-eta * lambda) + e` for `e` the
    /// weighted error of `correct` (within [`SIMPLEX_TOL`]).
    pub fn update(
        &self,
        correct: &[bool],
        eta: f64,
        lambda: f64,
    ) -> Result<(SampleWeights, f64), BoostError> {
        if correct.len() != self.values.len() {
            return Err(BoostError::LengthMismatch {
                weights: self.values.len(),
                outcomes: correct.len(),
            });
        }
        if lambda.is_nan() || lambda <= 0.0 {
            return Err(BoostError::NonPositiveLambda(lambda));
        }
        if eta.is_nan() || eta <= 0.0 {
            return Err(BoostError::NonPositiveEta(eta));
        }
        let shrink = (-eta * lambda).exp();
        let scaled: Vec<f64> = self
            .values
            .iter()
            .zip(correct)
            .map(|(w, &c)| if c { w * shrink } else { *w })
            .collect();
        let z = compensated_sum(scaled.iter().copied());
        let values = scaled.into_iter().map(|v| v / z).collect();
        Ok((SampleWeights { values }, z))
    }
}

/// Hyperparameters of one boosted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    /// Deviation rate scaling the reweighting exponent; its reciprocal is the
    /// total checkpoint-weight budget.
    pub eta: f64,
    /// Training iterations between checkpoint candidates.
    pub iters_per_checkpoint: usize,
    /// Total training iterations for the whole run.
    pub total_iters: usize,
    /// Estimated weight of the final model, reserved in the budget up front.
    pub lambda0: f64,
    /// Number of classes.
    pub classes: usize,
    /// Lower clamp applied to error rates before computing checkpoint
    /// weights; `None` defers to `1 / (2n)` at run time.
    pub error_floor: Option<f64>,
}

impl BoostConfig {
    /// Standard configuration: `lambda0` is derived from an assumed final
    /// error rate of 0.05, the error floor is deferred to run time.
    pub fn new(
        eta: f64,
        iters_per_checkpoint: usize,
        total_iters: usize,
        classes: usize,
    ) -> Result<Self, BoostError> {
        let lambda0 = match checkpoint_weight(0.05, classes, 0.025)? {
            CheckpointWeight::Accepted(l) => l,
            CheckpointWeight::Rejected { .. } => unreachable!("error 0.05 always accepted"),
        };
        let cfg = Self {
            eta,
            iters_per_checkpoint,
            total_iters,
            lambda0,
            classes,
            error_floor: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BoostError> {
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(BoostError::NonPositiveEta(self.eta));
        }
        if self.iters_per_checkpoint == 0 || self.iters_per_checkpoint > self.total_iters {
            return Err(BoostError::InvalidConfig(format!(
                "need 1 <= iters_per_checkpoint <= total_iters, got {} and {}",
                self.iters_per_checkpoint, self.total_iters
            )));
        }
        if !self.lambda0.is_finite() || self.lambda0 <= 0.0 {
            return Err(BoostError::InvalidConfig(format!(
                "lambda0 must be positive, got {}",
                self.lambda0
            )));
        }
        if self.classes < 2 {
            return Err(BoostError::TooFewClasses(self.classes));
        }
        if let Some(floor) = self.error_floor {
            validate_error_floor(floor)?;
        }
        Ok(())
    }

    /// The error floor actually used for a training set of `n` samples.
    pub fn resolved_error_floor(&self, n: usize) -> f64 {
        self.error_floor.unwrap_or(1.0 / (2.0 * n as f64))
    }
}

fn validate_error_floor(floor: f64) -> Result<(), BoostError> {
    if !floor.is_finite() || floor <= 0.0 || floor >= 0.5 {
        return Err(BoostError::BadErrorFloor(floor));
    }
    Ok(())
}

/// Outcome of scoring a checkpoint candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CheckpointWeight {
    /// Positive weight; the checkpoint joins the ensemble.
    Accepted(f64),
    /// Non-positive weight (error rate at or beyond the random-guess
    /// boundary `(k-1)/k`); the checkpoint must be discarded.
    Rejected { lambda: f64 },
}

/// Checkpoint weight from its weighted error rate:
/// `ln((1 - e') / e') + ln(k - 1)` with `e' = max(error, error_floor)`.
///
/// The clamp keeps the weight finite when the error rate reaches zero. A
/// non-positive result is a rejection signal, not an error: it means the
/// candidate is no better than random guessing among `k` classes.
pub fn checkpoint_weight(
    error: f64,
    classes: usize,
    error_floor: f64,
) -> Result<CheckpointWeight, BoostError> {
    if classes < 2 {
        return Err(BoostError::TooFewClasses(classes));
    }
    if !error.is_finite() || !(0.0..=1.0).contains(&error) {
        return Err(BoostError::ErrorRateOutOfRange(error));
    }
    validate_error_floor(error_floor)?;
    let e = error.max(error_floor);
    let lambda = ((1.0 - e) / e).ln() + ((classes - 1) as f64).ln();
    if lambda > 0.0 {
        Ok(CheckpointWeight::Accepted(lambda))
    } else {
        Ok(CheckpointWeight::Rejected { lambda })
    }
}

/// The closed form of the reweighting normalizer:
/// `(1 - error) * exp(-eta * lambda) + error`.
///
/// This is the value [`SampleWeights::update`] returns (up to summation
/// error), and the factor by which the exponential-loss bound shrinks when a
/// checkpoint with positive weight is added.
pub fn closed_form_z(error: f64, eta: f64, lambda: f64) -> f64 {
    (1.0 - error) * (-eta * lambda).exp() + error
}

/// True while the accumulated checkpoint weights stay under the budget
/// `1 / eta`. The history conventionally includes the final-model estimate
/// `lambda0` so the estimate participates from the first check.
pub fn budget_allows(lambda_history: &[f64], eta: f64) -> bool {
    debug_assert!(eta > 0.0);
    debug_assert!(lambda_history.iter().all(|l| *l > 0.0));
    compensated_sum(lambda_history.iter().copied()) < 1.0 / eta
}

/// Weighted average of the members' one-hot outputs, normalized to a
/// probability vector: `sum_m lambda_m G_m / sum_m lambda_m`.
pub fn combine(onehot_outputs: &[Vec<f64>], lambdas: &[f64]) -> Result<Vec<f64>, BoostError> {
    if onehot_outputs.is_empty() {
        return Err(BoostError::EmptyEnsemble);
    }
    if onehot_outputs.len() != lambdas.len() {
        return Err(BoostError::LengthMismatch {
            weights: lambdas.len(),
            outcomes: onehot_outputs.len(),
        });
    }
    if let Some(l) = lambdas.iter().find(|l| l.is_nan() || **l <= 0.0) {
        return Err(BoostError::NonPositiveLambda(*l));
    }
    let k = onehot_outputs[0].len();
    let total = compensated_sum(lambdas.iter().copied());
    let mut acc = vec![0.0f64; k];
    for (out, &lambda) in onehot_outputs.iter().zip(lambdas) {
        if out.len() != k {
            return Err(BoostError::LengthMismatch {
                weights: k,
                outcomes: out.len(),
            });
        }
        for (a, &o) in acc.iter_mut().zip(out) {
            *a += lambda * o;
        }
    }
    for a in &mut acc {
        *a /= total;
    }
    Ok(acc)
}

/// Mean of `exp(-score)` over the ensemble's true-class scores.
pub fn exp_loss(true_class_scores: &[f64]) -> Result<f64, BoostError> {
    if true_class_scores.is_empty() {
        return Err(BoostError::EmptyScores);
    }
    let sum = compensated_sum(true_class_scores.iter().map(|s| (-s).exp()));
    Ok(sum / true_class_scores.len() as f64)
}

/// Upper bound on the exponential loss: the product of the recorded
/// normalizers. The empty product is 1.
pub fn loss_bound(z_history: &[f64]) -> f64 {
    z_history.iter().product()
}

/// One saved base model: learner parameters plus the boosting statistics
/// frozen at save time.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub params: MlpParams,
    /// Ensemble mixing weight; strictly positive for every stored record.
    pub lambda: f64,
    /// Weighted error rate on the training set at save time.
    pub error: f64,
    /// Normalizer value, `(1 - error) * exp(-eta * lambda) + error`.
    pub z: f64,
    /// Training iteration index at save time.
    pub step: u64,
}

impl CheckpointRecord {
    pub fn new(
        params: MlpParams,
        lambda: f64,
        error: f64,
        z: f64,
        step: u64,
    ) -> Result<Self, BoostError> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(BoostError::NonPositiveLambda(lambda));
        }
        if !error.is_finite() || !(0.0..=1.0).contains(&error) {
            return Err(BoostError::ErrorRateOutOfRange(error));
        }
        Ok(Self {
            params,
            lambda,
            error,
            z,
            step,
        })
    }
}

/// Ordered checkpoint set with normalized mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    checkpoints: Vec<CheckpointRecord>,
    normalized_weights: Vec<f64>,
}

impl EnsembleModel {
    pub fn new(checkpoints: Vec<CheckpointRecord>) -> Result<Self, BoostError> {
        if checkpoints.is_empty() {
            return Err(BoostError::EmptyEnsemble);
        }
        if let Some(r) = checkpoints.iter().find(|r| r.lambda.is_nan() || r.lambda <= 0.0) {
            return Err(BoostError::NonPositiveLambda(r.lambda));
        }
        let total = compensated_sum(checkpoints.iter().map(|r| r.lambda));
        let normalized_weights = checkpoints.iter().map(|r| r.lambda / total).collect();
        Ok(Self {
            checkpoints,
            normalized_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn members(&self) -> &[CheckpointRecord] {
        &self.checkpoints
    }

    pub fn normalized_weights(&self) -> &[f64] {
        &self.normalized_weights
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|r| r.lambda).collect()
    }

    /// Combined prediction for one feature vector: the weighted average of
    /// the members' one-hot predictions, a probability vector over classes.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>, crate::learner::LearnerError> {
        let k = self.checkpoints[0].params.output_dim();
        let mut acc = vec![0.0f64; k];
        for (record, &w) in self.checkpoints.iter().zip(&self.normalized_weights) {
            let onehot = crate::learner::predict_onehot(&record.params, features)?;
            for (a, o) in acc.iter_mut().zip(onehot) {
                *a += w * o;
            }
        }
        Ok(acc)
    }
}
