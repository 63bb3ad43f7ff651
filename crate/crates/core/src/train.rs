//! Mini-batch training of one multi-head network and its evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{augment_batch, AugmentPolicy, LabeledImageSet};
use crate::error::{ensure, Error, Result};
use crate::exec::Exec;
use crate::joint::{multilayer_output, HeadWeights, SampleWeightTable};
use crate::nn::{Mode, MultiHeadNetwork};
use crate::optim::{nesterov_step, MomentumState, SgdrSchedule};
use crate::seed::{derive_seed, stream_rng, Stream};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: SgdrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub head_weights: HeadWeights,
    /// Applied to every training batch; its normalization constants are not
    /// used here (sets arrive already normalized).
    pub augment: AugmentPolicy,
    pub seed: u64,
    /// Ensemble member index, folded into the shuffle and augmentation seeds.
    pub member: usize,
    pub exec: Exec,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, Config, "epochs must be at least 1");
        ensure!(self.batch_size >= 2, Config, "batch size must be at least 2 (batchnorm)");
        ensure!(
            (0.0..1.0).contains(&self.momentum),
            Config,
            "momentum must lie in [0, 1), got {}",
            self.momentum
        );
        ensure!(self.weight_decay >= 0.0, Config, "weight decay must be non-negative");
        self.schedule.validate()?;
        self.augment.validate()
    }
}

/// One row of training metrics. Errors and accuracies are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub member: usize,
    /// Learning rate at the first batch of the epoch.
    pub lr: f64,
    /// Sample-averaged combined loss `Σ α_i·L_i` over the epoch.
    pub train_loss: f64,
    /// Accuracy of each head on the augmented training batches (batch statistics).
    pub head_train_acc: Vec<f64>,
    pub joint_train_acc: f64,
    pub test_error: f64,
    pub joint_test_error: f64,
}

/// Fraction of rows whose argmax differs from the label.
pub fn error_rate(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let pred = probs.argmax_rows()?;
    ensure!(
        pred.len() == labels.len(),
        Contract,
        "{} predictions for {} labels",
        pred.len(),
        labels.len()
    );
    if labels.is_empty() {
        return Ok(0.0);
    }
    let wrong = pred.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Inference-mode outputs of one network on a whole set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub head_outputs: Vec<Tensor>,
    pub joint_output: Tensor,
    pub head_errors: Vec<f64>,
    pub joint_error: f64,
}

impl EvalReport {
    /// Per-sample correctness of the joint prediction.
    pub fn joint_correct(&self, labels: &[usize]) -> Result<Vec<bool>> {
        let pred = self.joint_output.argmax_rows()?;
        Ok(pred.iter().zip(labels).map(|(p, l)| p == l).collect())
    }

    /// Per-sample correctness of head 1 alone.
    pub fn head1_correct(&self, labels: &[usize]) -> Result<Vec<bool>> {
        let pred = self.head_outputs[0].argmax_rows()?;
        Ok(pred.iter().zip(labels).map(|(p, l)| p == l).collect())
    }
}

/// Rows per inference chunk. Fixed so that evaluation results never depend on
/// the training batch size.
pub const EVAL_BATCH: usize = 100;

pub fn evaluate(net: &MultiHeadNetwork, set: &LabeledImageSet, hw: &HeadWeights, exec: Exec) -> Result<EvalReport> {
    let head_outputs = net.predict(&set.images, EVAL_BATCH, exec)?;
    let joint_output = multilayer_output(&head_outputs, hw)?;
    let head_errors = head_outputs
        .iter()
        .map(|o| error_rate(o, &set.labels))
        .collect::<Result<Vec<_>>>()?;
    let joint_error = error_rate(&joint_output, &set.labels)?;
    Ok(EvalReport {
        head_outputs,
        joint_output,
        head_errors,
        joint_error,
    })
}

/// Seed of member `member`'s initial weights.
pub fn member_init_seed(master: u64, member: usize) -> u64 {
    derive_seed(master, Stream::Member, &[member as u64])
}

fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    // A single-sample batch has no batch variance; fold it into its neighbour.
    if out.len() > 1 && out[out.len() - 1].len() == 1 {
        let n = order.len();
        out.pop();
        let last = out.len() - 1;
        out[last] = &order[last * size..n];
    }
    out
}

/// Train `net` in place on `train` (already normalized), weighting each sample's
/// loss by `weights`. Calls `on_epoch` after each epoch with that epoch's row.
pub fn train_network(
    net: &mut MultiHeadNetwork,
    train: &LabeledImageSet,
    test: &LabeledImageSet,
    weights: &SampleWeightTable,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let m = net.num_heads();
    ensure!(
        cfg.head_weights.m() == m,
        Config,
        "head weights cover {} heads, network has {m}",
        cfg.head_weights.m()
    );
    ensure!(
        weights.len() == train.len(),
        Contract,
        "{} sample weights for {} training images",
        weights.len(),
        train.len()
    );
    ensure!(train.len() >= 2, Config, "need at least two training images");
    let mut state = MomentumState::new(net.params(), cfg.momentum, cfg.weight_decay);
    let alpha: Vec<f64> = cfg.head_weights.alpha.clone();
    let coef = cfg.head_weights.output_coefficients();
    let member = cfg.member as u64;
    let mut rows = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, &[member, epoch as u64]));
        let plan = batches(&order, cfg.batch_size);
        let nb = plan.len() as f64;
        let mut loss_sum = 0.0;
        let mut head_hits = vec![0usize; m];
        let mut joint_hits = 0usize;
        let epoch_lr = cfg.schedule.lr_at(epoch as f64);

        for (b, idx) in plan.iter().enumerate() {
            let seeds: Vec<u64> = idx
                .iter()
                .map(|&i| derive_seed(cfg.seed, Stream::Augment, &[member, epoch as u64, i as u64]))
                .collect();
            let images = augment_batch(&train.images.gather_rows(idx), &cfg.augment, &seeds, cfg.exec)?;
            let targets: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let w: Vec<f64> = idx.iter().map(|&i| weights.weights[i]).collect();

            let mut tape = Tape::new(cfg.exec);
            let fwd = net.forward_on(&mut tape, &images, Mode::Train, true)?;
            let mut terms = Vec::with_capacity(m);
            for (&h, &a) in fwd.heads.iter().zip(&alpha) {
                terms.push((tape.weighted_nll(h, &targets, &w)?, a));
            }
            let loss = tape.weighted_sum(&terms)?;
            let loss_value = tape.value(loss).item()?;
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {loss_value} at epoch {}, batch {b}",
                    epoch + 1
                )));
            }
            loss_sum += loss_value * idx.len() as f64;

            let outs: Vec<Tensor> = fwd.heads.iter().map(|&h| tape.value(h).clone()).collect();
            for (hits, o) in head_hits.iter_mut().zip(&outs) {
                *hits += o.argmax_rows()?.iter().zip(&targets).filter(|(p, t)| p == t).count();
            }
            let mut joint = vec![0.0; outs[0].numel()];
            for (o, c) in outs.iter().zip(&coef) {
                joint.iter_mut().zip(o.data()).for_each(|(j, v)| *j += c * v);
            }
            let joint = Tensor::new(outs[0].shape().to_vec(), joint)?;
            joint_hits += joint.argmax_rows()?.iter().zip(&targets).filter(|(p, t)| p == t).count();

            tape.backward(loss)?;
            net.collect_grads(&tape, &fwd)?;
            net.update_running_stats(&fwd);
            let lr = cfg.schedule.lr_at(epoch as f64 + b as f64 / nb);
            nesterov_step(net.params_mut(), &mut state, lr)?;
        }

        let n = train.len() as f64;
        let report = evaluate(net, test, &cfg.head_weights, cfg.exec)?;
        let row = EpochMetrics {
            epoch: epoch + 1,
            member: cfg.member,
            lr: epoch_lr,
            train_loss: loss_sum / n,
            head_train_acc: head_hits.iter().map(|&h| h as f64 / n).collect(),
            joint_train_acc: joint_hits as f64 / n,
            test_error: report.head_errors[0],
            joint_test_error: report.joint_error,
        };
        log::info!(
            "member {} epoch {}: loss {:.4}, test error {:.4}, joint {:.4}",
            row.member,
            row.epoch,
            row.train_loss,
            row.test_error,
            row.joint_test_error
        );
        on_epoch(&row)?;
        rows.push(row);
    }
    for p in net.params_mut() {
        p.clear_grad();
    }
    Ok(rows)
}
