// SPDX-License-Identifier: Apache-2.0

//! Training: loss, optimizer, flip regularization and the direct hinge
//! regularizer.

mod adam;
mod config;
mod loss;
mod regularizer;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use config::{DirectReg, TrainConfig};
pub use loss::{cross_entropy_loss, LossValue};
pub use regularizer::{direct_reg_penalty, hinge, DirectRegOutput};
pub use trainer::{
    flip_train_step, flip_train_step_with_masks, log_csv, plain_train_step, train, train_with, EpochLog, StepOutput,
    TrainOutcome,
};
