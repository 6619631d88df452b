// SPDX-License-Identifier: Apache-2.0

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross_entropy_loss, direct_reg_penalty, Adam, DirectReg, LossValue, TrainConfig};
use crate::channel::{sample_mask, BitErrorChannel, FlipMask, FlipMode};
use crate::data::Dataset;
use crate::eval::accuracy;
use crate::model::{Gradients, Network};
use crate::rng::derive;
use crate::tolerance::network_tolerance;
use crate::{Error, Result};

// Stream labels for the per-run random sources.
const SHUFFLE_STREAM: u64 = 0x5348_5546;
const FLIP_STREAM: u64 = 0x464c_4950;

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: LossValue,
    pub grads: Gradients,
}

/// Loss and gradients of one clean step, with the direct hinge regularizer
/// when `reg` is given. Parameters are not updated; running batch norm
/// statistics are.
pub fn plain_train_step(
    net: &mut Network,
    x: &[i32],
    labels: &[usize],
    reg: Option<&DirectReg>,
) -> Result<StepOutput> {
    let trace = net.forward_train(x, labels.len(), None, FlipMode::None)?;
    let (ce, dlogits) = cross_entropy_loss(&trace.logits, labels, net.classes())?;
    let (loss, grads) = match reg {
        Some(r) => {
            let out = direct_reg_penalty(net, &trace, r)?;
            let grads = net.backward(&trace, &dlogits, Some(&out.extra))?;
            let loss = LossValue {
                cross_entropy: ce,
                reg_penalty: out.penalty,
                lambda: r.lambda,
            };
            (loss, grads)
        }
        None => (
            LossValue {
                cross_entropy: ce,
                ..Default::default()
            },
            net.backward(&trace, &dlogits, None)?,
        ),
    };
    Ok(StepOutput { loss, grads })
}

/// One flip-regularized step: fresh masks are drawn from
/// `channel.substream(l)` for every weight tensor, the forward pass uses the
/// corrupted weights and the weight gradient follows `mode`.
pub fn flip_train_step(
    net: &mut Network,
    x: &[i32],
    labels: &[usize],
    channel: &BitErrorChannel,
    mode: FlipMode,
) -> Result<StepOutput> {
    let masks: Vec<FlipMask> = net
        .blocks()
        .iter()
        .enumerate()
        .map(|(l, b)| sample_mask(&channel.substream(l as u64), b.binary().shape().clone()))
        .collect();
    flip_train_step_with_masks(net, x, labels, masks, mode)
}

/// [`flip_train_step`] with caller-provided masks.
pub fn flip_train_step_with_masks(
    net: &mut Network,
    x: &[i32],
    labels: &[usize],
    masks: Vec<FlipMask>,
    mode: FlipMode,
) -> Result<StepOutput> {
    let trace = net.forward_train(x, labels.len(), Some(masks), mode)?;
    let (ce, dlogits) = cross_entropy_loss(&trace.logits, labels, net.classes())?;
    let grads = net.backward(&trace, &dlogits, None)?;
    Ok(StepOutput {
        loss: LossValue {
            cross_entropy: ce,
            ..Default::default()
        },
        grads,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean total loss over the epoch's batches.
    pub train_loss: f64,
    /// Eval-mode accuracy in percent; NaN without an eval set.
    pub eval_acc: f64,
    /// Mean unweighted regularizer value; 0 without direct regularization.
    pub penalty: f64,
    /// Network tolerance `T^b` per configured snapshot level.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tolerance: Vec<f64>,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,eval_acc,penalty";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:.17e},{:.17e},{:.17e}",
            self.epoch, self.lr, self.train_loss, self.eval_acc, self.penalty
        )
    }
}

/// Renders a per-epoch log as CSV.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(EpochLog::CSV_HEADER);
    s.push('\n');
    for row in log {
        s.push_str(&row.csv_row());
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// Copy of the network after the epoch with the highest eval accuracy
    /// (earliest on ties). `None` without an eval set or with zero epochs.
    pub best: Option<Network>,
    pub best_epoch: Option<usize>,
    pub best_eval_acc: Option<f64>,
}

/// Trains `net` in place. Deterministic for a fixed configuration.
pub fn train(net: &mut Network, train_set: &Dataset, eval_set: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(net, train_set, eval_set, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    net: &mut Network,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    for ds in std::iter::once(train_set).chain(eval_set) {
        if ds.sample_len() != net.input_len() || ds.classes() > net.classes() {
            return Err(Error::Shape(format!(
                "dataset {} with {} classes does not fit network input {} with {} outputs",
                ds.sample_shape(),
                ds.classes(),
                net.architecture().input,
                net.classes()
            )));
        }
    }
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut opt = Adam::new(net, cfg.adam);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut outcome = TrainOutcome {
        log: Vec::with_capacity(cfg.epochs),
        best: None,
        best_epoch: None,
        best_eval_acc: None,
    };
    let flipping = cfg.flip_mode != FlipMode::None;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(derive(derive(cfg.seed, SHUFFLE_STREAM), epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut pen_sum, mut batches) = (0.0, 0.0, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = train_set.gather(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels()[i]).collect();
            let step = if flipping {
                let stream = derive(derive(FLIP_STREAM, epoch as u64), bi as u64);
                let ch = BitErrorChannel::new(cfg.flip_p, cfg.seed, stream)?;
                flip_train_step(net, &x, &labels, &ch, cfg.flip_mode)?
            } else {
                plain_train_step(net, &x, &labels, cfg.direct_reg.as_ref())?
            };
            if !step.loss.total().is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite loss in epoch {epoch}")));
            }
            opt.step(net, &step.grads, lr)?;
            loss_sum += step.loss.total();
            pen_sum += step.loss.reg_penalty;
            batches += 1;
        }
        let eval_acc = match eval_set {
            Some(ds) => accuracy(net, ds)?,
            None => f64::NAN,
        };
        let tolerance = match (eval_set, cfg.snapshot_b.is_empty()) {
            (Some(ds), false) => network_tolerance(&*net, ds, &cfg.snapshot_b)?.t_network,
            _ => Vec::new(),
        };
        let row = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            eval_acc,
            penalty: pen_sum / batches as f64,
            tolerance,
        };
        if eval_set.is_some() && outcome.best_eval_acc.is_none_or(|b| eval_acc > b) {
            outcome.best_eval_acc = Some(eval_acc);
            outcome.best_epoch = Some(epoch);
            outcome.best = Some(net.clone());
        }
        on_epoch(&row);
        outcome.log.push(row);
    }
    Ok(outcome)
}
