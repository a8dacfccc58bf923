//! Deterministic SGD training loop with momentum and step-decay learning
//! rate.
//!
//! Each step builds a fresh tape, sums all M head objectives at the epoch's
//! lambda, runs one backward pass, and applies SGD-with-momentum to every
//! parameter. Training is a pure function of (config, data): batch order
//! derives from (seed, epoch), so two runs with the same inputs produce
//! identical parameters and logs, and a run stopped early and resumed from
//! its checkpoint replays the uninterrupted one exactly. Both schedules
//! (lambda ramp, lr decay) are anchored to the full epoch horizon, never to
//! the stopping point.
//!
//! The loss decomposition identity is asserted on every training batch and on
//! every evaluation, and the evaluation losses must satisfy the Jensen
//! guarantee `ensemble <= mean individual` at each epoch; violations abort
//! with an internal-consistency error because they indicate a bug.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::data::{BatchIterator, Dataset};
use crate::loss::{decompose, decompose_logits, dncc_total_loss, lambda_at, DnccConfig};
use crate::model::{EnsembleModel, Param};
use crate::tensor::Tape;
use crate::{Error, Result};

/// Numerical slack for the per-epoch Jensen assertion on evaluation losses.
const JENSEN_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    /// Epochs at which the learning rate is multiplied by the decay factor.
    pub lr_milestones: Vec<usize>,
    pub momentum: f64,
    /// L2 penalty added to the gradient; 0 disables it.
    pub weight_decay: f64,
    pub dncc: DnccConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !self.initial_lr.is_finite() || self.initial_lr <= 0.0 {
            return Err(Error::Config(format!(
                "initial_lr must be positive, got {}",
                self.initial_lr
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        let mut prev = None;
        for &m in &self.lr_milestones {
            if m >= self.epochs {
                return Err(Error::Config(format!(
                    "milestone {m} is not below epochs {}",
                    self.epochs
                )));
            }
            if let Some(p) = prev {
                if m <= p {
                    return Err(Error::Config("milestones must be strictly increasing".into()));
                }
            }
            prev = Some(m);
        }
        Ok(())
    }
}

/// `initial_lr * decay^(number of milestones <= epoch)`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let hits = cfg.lr_milestones.iter().filter(|&&m| m <= epoch).count();
    cfg.initial_lr * cfg.lr_decay_factor.powi(hits as i32)
}

/// One momentum update: `v <- momentum * v + g; theta <- theta - lr * v`.
pub fn sgd_step(
    params: &mut [Param],
    grads: &[Vec<f64>],
    velocity: &mut [Vec<f64>],
    lr: f64,
    momentum: f64,
) {
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((theta, &gi), vi) in p.data.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = momentum * *vi + gi;
            *theta -= lr * *vi;
        }
    }
}

/// Per-epoch metrics. Wall time is kept in memory only: serialized metrics
/// must be bitwise reproducible across runs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    pub lr: f64,
    pub train_ensemble_loss: f64,
    pub train_mean_individual_loss: f64,
    pub train_bregman_information: f64,
    pub val_ensemble_loss: f64,
    pub val_mean_individual_loss: f64,
    pub val_bregman_information: f64,
    pub val_ensemble_accuracy: f64,
    pub val_head_accuracy: Vec<f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
}

impl MetricsLog {
    /// One JSON object per epoch.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for r in &self.records {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricsLog { records })
    }

    /// Flat CSV with one per-head accuracy column per head.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let heads = self.records.first().map_or(0, |r| r.val_head_accuracy.len());
        let head_cols: Vec<String> = (0..heads).map(|h| format!("val_head_{h}_accuracy")).collect();
        writeln!(
            f,
            "epoch,lambda,lr,train_ensemble_loss,train_mean_individual_loss,train_bregman_information,val_ensemble_loss,val_mean_individual_loss,val_bregman_information,val_ensemble_accuracy{}{}",
            if heads > 0 { "," } else { "" },
            head_cols.join(",")
        )?;
        for r in &self.records {
            let head_vals: Vec<String> = r.val_head_accuracy.iter().map(|v| v.to_string()).collect();
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{}{}{}",
                r.epoch,
                r.lambda,
                r.lr,
                r.train_ensemble_loss,
                r.train_mean_individual_loss,
                r.train_bregman_information,
                r.val_ensemble_loss,
                r.val_mean_individual_loss,
                r.val_bregman_information,
                r.val_ensemble_accuracy,
                if heads > 0 { "," } else { "" },
                head_vals.join(",")
            )?;
        }
        Ok(())
    }
}

/// Loss and accuracy summary of a frozen model on a dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub ensemble_accuracy: f64,
    pub per_head_accuracy: Vec<f64>,
    pub ensemble_loss: f64,
    pub mean_individual_loss: f64,
    pub bregman_information: f64,
}

/// Evaluate without mutating anything; asserts the decomposition identity and
/// returns sample-weighted averages over chunks of 256.
pub fn evaluate(model: &EnsembleModel, ds: &Dataset) -> Result<EvalMetrics> {
    if ds.is_empty() {
        return Err(Error::Contract("empty evaluation set".into()));
    }
    let n = ds.len();
    let k = model.num_classes();
    let m = model.num_heads();
    let mut sum_ens = 0.0;
    let mut sum_mean_ind = 0.0;
    let mut sum_info = 0.0;
    let mut head_correct = vec![0usize; m];
    let mut ensemble_correct = 0usize;

    let mut offset = 0;
    while offset < n {
        let indices: Vec<usize> = (offset..(offset + 256).min(n)).collect();
        let batch = ds.gather(&indices);
        let logits = model.forward_values(&batch)?;
        let views: Vec<&[f64]> = logits.iter().map(|g| g.as_slice()).collect();
        let breakdown = decompose_logits(&views, k, &batch.labels, 0.0)?;
        let nb = batch.len() as f64;
        sum_ens += nb * breakdown.ensemble_loss;
        sum_mean_ind += nb * breakdown.mean_individual_loss();
        sum_info += nb * breakdown.bregman_information;

        let pred = model.predict(&batch)?;
        for (r, &y) in batch.labels.iter().enumerate() {
            if pred.labels[r] == y {
                ensemble_correct += 1;
            }
            for (h, head) in logits.iter().enumerate() {
                if crate::model::argmax(&head[r * k..(r + 1) * k]) == y {
                    head_correct[h] += 1;
                }
            }
        }
        offset += indices.len();
    }

    let nf = n as f64;
    let metrics = EvalMetrics {
        ensemble_accuracy: ensemble_correct as f64 / nf,
        per_head_accuracy: head_correct.iter().map(|&c| c as f64 / nf).collect(),
        ensemble_loss: sum_ens / nf,
        mean_individual_loss: sum_mean_ind / nf,
        bregman_information: sum_info / nf,
    };
    if metrics.ensemble_loss > metrics.mean_individual_loss + JENSEN_SLACK {
        return Err(Error::Inconsistency(format!(
            "evaluation ensemble loss {} exceeds mean individual loss {}",
            metrics.ensemble_loss, metrics.mean_individual_loss
        )));
    }
    Ok(metrics)
}

/// Train from scratch over the full `cfg.epochs` horizon.
///
/// When `out_dir` is set, `last.ckpt` is rewritten after every completed
/// epoch, so an abort retains the last good state.
pub fn train(
    model: &mut EnsembleModel,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<MetricsLog> {
    train_until(model, train_ds, val_ds, cfg, cfg.epochs, out_dir)
}

/// Train only the first `stop_after` epochs of the `cfg.epochs`-epoch
/// schedule (an interrupted run). Lambda and learning-rate schedules stay
/// anchored to `cfg.epochs`.
pub fn train_until(
    model: &mut EnsembleModel,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
    stop_after: usize,
    out_dir: Option<&Path>,
) -> Result<MetricsLog> {
    cfg.validate()?;
    if stop_after > cfg.epochs {
        return Err(Error::Config(format!(
            "stop_after {stop_after} exceeds epochs {}",
            cfg.epochs
        )));
    }
    let mut velocity: Vec<Vec<f64>> =
        model.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
    train_range(model, &mut velocity, 0, stop_after, train_ds, val_ds, cfg, out_dir)
}

/// Continue a checkpointed run through the remaining epochs; the returned log
/// covers only those.
pub fn resume(
    ckpt: Checkpoint,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(EnsembleModel, MetricsLog)> {
    cfg.validate()?;
    if ckpt.seed != cfg.seed {
        return Err(Error::Config(format!(
            "checkpoint was trained with seed {}, config says {}",
            ckpt.seed, cfg.seed
        )));
    }
    if ckpt.epoch > cfg.epochs {
        return Err(Error::Config(format!(
            "checkpoint has completed {} epochs, config allows {}",
            ckpt.epoch, cfg.epochs
        )));
    }
    let mut model = ckpt.model;
    let mut velocity = ckpt
        .velocities
        .unwrap_or_else(|| model.params().iter().map(|p| vec![0.0; p.data.len()]).collect());
    let log = train_range(
        &mut model,
        &mut velocity,
        ckpt.epoch,
        cfg.epochs,
        train_ds,
        val_ds,
        cfg,
        out_dir,
    )?;
    Ok((model, log))
}

#[allow(clippy::too_many_arguments)]
fn train_range(
    model: &mut EnsembleModel,
    velocity: &mut [Vec<f64>],
    start_epoch: usize,
    end_epoch: usize,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<MetricsLog> {
    if train_ds.num_features() != model.spec().input_dim
        || val_ds.num_features() != model.spec().input_dim
    {
        return Err(Error::Dimension(format!(
            "dataset width {} does not match model input_dim {}",
            train_ds.num_features(),
            model.spec().input_dim
        )));
    }
    let iterator = BatchIterator::new(train_ds, cfg.batch_size, cfg.seed)?;
    let mut log = MetricsLog::default();

    for epoch in start_epoch..end_epoch {
        let started = Instant::now();
        let lr = lr_at(cfg, epoch);
        let lambda = lambda_at(&cfg.dncc.lambda_schedule, epoch, cfg.epochs)?;

        let mut sum_ens = 0.0;
        let mut sum_mean_ind = 0.0;
        let mut sum_info = 0.0;
        let mut seen = 0.0;
        for (step, batch) in iterator.epoch_batches(epoch).iter().enumerate() {
            // A diverged run surfaces as non-finite values somewhere in the
            // loss construction; report it with its epoch/step context.
            let blown_up = |e: Error| match e {
                Error::Numeric(_) => Error::NonFiniteLoss { epoch, step },
                other => other,
            };
            let mut tape = Tape::new();
            let pass = model.forward(&mut tape, batch).map_err(blown_up)?;
            let (total, _) = dncc_total_loss(
                &mut tape,
                &pass.per_head_logits,
                &batch.labels,
                lambda,
                cfg.dncc.detach_ensemble_mean,
            )
            .map_err(blown_up)?;
            let loss_val = tape.scalar_value(total)?;
            if !loss_val.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            let breakdown = decompose(&tape, &pass.per_head_logits, &batch.labels, lambda)?;
            tape.backward(total)?;
            let mut grads: Vec<Vec<f64>> = pass
                .param_ids
                .iter()
                .zip(model.params())
                .map(|(&id, p)| {
                    tape.grad(id)
                        .map(|g| g.to_vec())
                        .unwrap_or_else(|| vec![0.0; p.data.len()])
                })
                .collect();
            if cfg.weight_decay != 0.0 {
                for (g, p) in grads.iter_mut().zip(model.params()) {
                    for (gi, &theta) in g.iter_mut().zip(&p.data) {
                        *gi += cfg.weight_decay * theta;
                    }
                }
            }
            sgd_step(model.params_mut(), &grads, velocity, lr, cfg.momentum);

            let nb = batch.len() as f64;
            sum_ens += nb * breakdown.ensemble_loss;
            sum_mean_ind += nb * breakdown.mean_individual_loss();
            sum_info += nb * breakdown.bregman_information;
            seen += nb;
        }

        let val = evaluate(model, val_ds)?;
        let record = EpochRecord {
            epoch,
            lambda,
            lr,
            train_ensemble_loss: sum_ens / seen,
            train_mean_individual_loss: sum_mean_ind / seen,
            train_bregman_information: sum_info / seen,
            val_ensemble_loss: val.ensemble_loss,
            val_mean_individual_loss: val.mean_individual_loss,
            val_bregman_information: val.bregman_information,
            val_ensemble_accuracy: val.ensemble_accuracy,
            val_head_accuracy: val.per_head_accuracy,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        let gap = (record.train_ensemble_loss
            - (record.train_mean_individual_loss - record.train_bregman_information))
            .abs();
        if gap >= 1e-9 {
            return Err(Error::Inconsistency(format!(
                "epoch {epoch}: aggregated decomposition identity violated by {gap:e}"
            )));
        }
        log.records.push(record);
        if let Some(dir) = out_dir {
            save_checkpoint(&dir.join("last.ckpt"), model, epoch + 1, cfg.seed, Some(velocity))?;
        }
    }
    Ok(log)
}
