//! Training: shuffled mini-batches, summed-loss gradients, Adam updates,
//! best-checkpoint tracking and optional early stopping.
//!
//! Every source of randomness reseeds from the run seed through fixed
//! stream indices, and the per-epoch generators derive from the epoch
//! number alone, so a run resumed from a checkpoint walks exactly the
//! same sequence as an uninterrupted one.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{fnv1a64, load_checkpoint, save_checkpoint, Checkpoint};

use crate::arch::{backward, forward, predict_logits, NetworkConfig, ParamStore};
use crate::error::{Error, Result};
use crate::layers::{cross_entropy_loss, softmax, Mode};
use crate::rng::{streams, Rng};
use crate::tensor::Volume;
use serde::{Deserialize, Serialize};

fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    100
}
fn default_lr() -> f64 {
    5e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Stop after this many epochs without a validation improvement.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            patience: None,
            shuffle: true,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.patience == Some(0) {
            return Err(Error::config("patience must be >= 1 when set"));
        }
        // delegate the optimizer scalar checks
        let probe = ParamStore::new();
        AdamState::with_hyperparams(
            &probe,
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.epsilon,
        )?;
        Ok(())
    }
}

/// Per-epoch record; `epoch` counts completed epochs from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy per training sample (the update itself uses the
    /// batch sum).
    pub train_loss: f64,
    /// Accuracy of the train-mode predictions made during the updates.
    pub train_acc: f64,
    pub val_acc: f64,
}

/// Where to pick up a run: zero epochs completed for a fresh start, or
/// the counters stored in a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResumePoint {
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

impl Default for ResumePoint {
    fn default() -> Self {
        ResumePoint {
            epoch: 0,
            best_epoch: 0,
            best_val_acc: -1.0,
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Stats of the epochs executed by this call.
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Best parameters seen by this call. When resuming, an earlier
    /// checkpoint may hold the overall best; the caller keeps that file.
    pub best_params: ParamStore,
    pub stopped_early: bool,
}

/// Lowest index of the maximal element.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode accuracy over a labeled set.
pub fn evaluate_accuracy(
    cfg: &NetworkConfig,
    params: &ParamStore,
    set: &[(Volume, usize)],
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::data("cannot evaluate on an empty set"));
    }
    let mut correct = 0usize;
    for (x, y) in set {
        if *y >= cfg.num_classes {
            return Err(Error::data(format!(
                "label {} out of range for {} classes",
                y, cfg.num_classes
            )));
        }
        if argmax(&predict_logits(cfg, params, x)?) == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Run the schedule. The callback fires after every epoch with the fresh
/// stats, whether the epoch improved on the best validation accuracy,
/// and the current parameter and optimizer state; returning an error
/// aborts training.
///
/// The selection metric is validation accuracy, ties resolved toward the
/// earliest epoch. With an empty validation set the train-mode accuracy
/// stands in for it.
#[allow(clippy::too_many_arguments)]
pub fn train(
    cfg: &NetworkConfig,
    params: &mut ParamStore,
    adam: &mut AdamState,
    train_set: &[(Volume, usize)],
    val_set: &[(Volume, usize)],
    schedule: &TrainSchedule,
    seed: u64,
    resume: ResumePoint,
    mut on_epoch: impl FnMut(&EpochStats, bool, &ParamStore, &AdamState) -> Result<()>,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    cfg.shape_trace()?;
    if train_set.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    for (_, y) in train_set.iter().chain(val_set) {
        if *y >= cfg.num_classes {
            return Err(Error::data(format!(
                "label {} out of range for {} classes",
                y, cfg.num_classes
            )));
        }
    }
    if resume.epoch > schedule.epochs {
        return Err(Error::config(format!(
            "resume epoch {} exceeds the {}-epoch schedule",
            resume.epoch, schedule.epochs
        )));
    }

    let shuffle_seed = Rng::derive(seed, streams::SHUFFLE);
    let dropout_seed = Rng::derive(seed, streams::DROPOUT);
    let n = train_set.len();

    let mut history = Vec::new();
    let mut best_val = resume.best_val_acc;
    let mut best_epoch = resume.best_epoch;
    let mut best_params = params.clone();
    let mut since_best = resume.epoch.saturating_sub(resume.best_epoch);
    let mut stopped_early = false;

    for epoch0 in resume.epoch..schedule.epochs {
        let epoch = epoch0 + 1;
        let mut order: Vec<usize> = (0..n).collect();
        if schedule.shuffle {
            let mut rng = Rng::new(Rng::derive(shuffle_seed, epoch0 as u64));
            rng.shuffle(&mut order);
        }
        let epoch_dropout = Rng::derive(dropout_seed, epoch0 as u64);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut position = 0u64;
        for chunk in order.chunks(schedule.batch_size) {
            let mut grads = params.zeros_like();
            for &idx in chunk {
                let (x, y) = &train_set[idx];
                let mut sample_rng = Rng::new(Rng::derive(epoch_dropout, position));
                position += 1;
                let trace = forward(cfg, params, x, Mode::Train, &mut sample_rng)?;
                let probs = softmax(&trace.logits);
                if argmax(&probs) == *y {
                    correct += 1;
                }
                let (loss, d_logits) = cross_entropy_loss(&[probs], &[*y])?;
                loss_sum += loss;
                let g = backward(cfg, params, &trace, &d_logits[0])?;
                grads.accumulate(&g.store)?;
            }
            adam_step(params, &grads, adam)?;
        }
        if !loss_sum.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite training loss in epoch {}",
                epoch
            )));
        }

        let train_acc = correct as f64 / n as f64;
        let val_acc = if val_set.is_empty() {
            train_acc
        } else {
            evaluate_accuracy(cfg, params, val_set)?
        };
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc,
            val_acc,
        };
        let improved = val_acc > best_val;
        if improved {
            best_val = val_acc;
            best_epoch = epoch;
            best_params = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(stats);
        on_epoch(&stats, improved, params, adam)?;
        if let Some(patience) = schedule.patience {
            if since_best >= patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_acc: best_val,
        best_params,
        stopped_early,
    })
}
