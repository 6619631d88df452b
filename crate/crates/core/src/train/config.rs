// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::AdamConfig;
use crate::channel::FlipMode;
use crate::{Error, Result};

/// Direct hinge regularization at tolerance level `b`, weighted by `lambda`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectReg {
    pub b: f64,
    pub lambda: f64,
    /// Optional per-hidden-layer multipliers; empty weighs every neuron
    /// equally.
    #[serde(default)]
    pub layer_weights: Vec<f64>,
}

impl DirectReg {
    pub fn new(b: f64, lambda: f64) -> Self {
        Self {
            b,
            lambda,
            layer_weights: Vec::new(),
        }
    }

    pub(crate) fn layer_weight(&self, l: usize) -> f64 {
        self.layer_weights.get(l).copied().unwrap_or(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// The learning rate is multiplied by `lr_decay` every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub flip_mode: FlipMode,
    pub flip_p: f64,
    pub direct_reg: Option<DirectReg>,
    pub seed: u64,
    pub adam: AdamConfig,
    /// `b` levels for an optional per-epoch tolerance snapshot.
    #[serde(default)]
    pub snapshot_b: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr: 1e-3,
            lr_decay: 0.5,
            lr_decay_every: 25,
            flip_mode: FlipMode::None,
            flip_p: 0.0,
            direct_reg: None,
            seed: 0,
            adam: AdamConfig::default(),
            snapshot_b: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate {}", self.lr));
        }
        if self.lr_decay_every == 0 || !(self.lr_decay > 0.0) {
            return bad("learning rate decay must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.flip_p) {
            return bad(format!("flip probability {}", self.flip_p));
        }
        if self.flip_mode != FlipMode::None && self.direct_reg.is_some() {
            return bad("flip regularization and direct regularization are exclusive".into());
        }
        if let Some(r) = &self.direct_reg {
            if !(r.b >= 0.0 && r.lambda > 0.0 && r.b.is_finite() && r.lambda.is_finite()) {
                return bad(format!("direct regularizer b = {}, lambda = {}", r.b, r.lambda));
            }
            if r.layer_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return bad("layer weights must be finite and non-negative".into());
            }
        }
        Ok(())
    }

    /// Learning rate used during (0-based) `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}
