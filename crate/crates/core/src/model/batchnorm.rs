// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization. Statistics are taken over the batch and,
/// for convolutions, every spatial position of the channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// What a train-mode forward pass keeps for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    /// Batch standard deviation `sqrt(var + eps)` per channel.
    pub std: Vec<f64>,
}

/// Integer thresholds equivalent to `sign(BN(h))` for integer `h`.
///
/// Output is +1 iff `orientation * (h - shift - 1/2) > 0`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronShift {
    pub shift: Vec<i64>,
    pub positive: Vec<bool>,
}

impl NeuronShift {
    /// No batch norm: threshold at zero.
    pub fn zero(channels: usize) -> Self {
        Self {
            shift: vec![0; channels],
            positive: vec![true; channels],
        }
    }

    pub fn len(&self) -> usize {
        self.shift.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shift.is_empty()
    }

    #[inline]
    pub fn fires(&self, n: usize, h: i64) -> bool {
        let above = h > self.shift[n];
        above == self.positive[n]
    }

    /// `|h - s_n - 1/2|`, the distance to the decision boundary.
    #[inline]
    pub fn distance(&self, n: usize, h: i64) -> f64 {
        ((h - self.shift[n]) as f64 - 0.5).abs()
    }
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn eval_std(&self, c: usize) -> f64 {
        (self.running_var[c] + self.eps).sqrt()
    }

    /// Eval-mode normalization of a single value.
    #[inline]
    pub fn apply_eval(&self, c: usize, h: f64) -> f64 {
        self.gamma[c] * (h - self.running_mean[c]) / self.eval_std(c) + self.beta[c]
    }

    /// Real threshold `tau` with `BN(h) = 0`.
    pub fn threshold(&self, c: usize) -> Result<f64> {
        if self.gamma[c] == 0.0 {
            return Err(Error::DegenerateBatchNorm { channel: c });
        }
        Ok(self.running_mean[c] - self.beta[c] * self.eval_std(c) / self.gamma[c])
    }

    /// Folds eval statistics into integer shifts.
    ///
    /// For `gamma > 0` the unit fires iff `h > tau`, i.e. `h >= floor(tau) + 1`.
    /// For `gamma < 0` it fires iff `h < tau`, i.e. `h <= ceil(tau) - 1`; the
    /// two coincide unless `tau` is an integer, where `BN(h) = 0` maps to -1.
    pub fn fold(&self) -> Result<NeuronShift> {
        let mut shift = Vec::with_capacity(self.channels());
        let mut positive = Vec::with_capacity(self.channels());
        for c in 0..self.channels() {
            let tau = self.threshold(c)?;
            let pos = self.gamma[c] > 0.0;
            let s = if pos { tau.floor() } else { tau.ceil() - 1.0 };
            if !s.is_finite() || s.abs() > i64::MAX as f64 / 4.0 {
                return Err(Error::InvalidArgument(format!(
                    "batch norm threshold {tau} of channel {c} is not representable"
                )));
            }
            shift.push(s as i64);
            positive.push(pos);
        }
        Ok(NeuronShift { shift, positive })
    }

    /// Train-mode forward over `[batch, channels, positions]`; updates the
    /// running statistics.
    pub fn forward_train(&mut self, h: &[f64], batch: usize, positions: usize) -> (Vec<f64>, BnCache) {
        let ch = self.channels();
        debug_assert_eq!(h.len(), batch * ch * positions);
        let n = (batch * positions) as f64;
        let mut y = vec![0.0; h.len()];
        let mut xhat = vec![0.0; h.len()];
        let mut std = vec![0.0; ch];
        for c in 0..ch {
            let idx = |s: usize, p: usize| (s * ch + c) * positions + p;
            let mut mean = 0.0;
            for s in 0..batch {
                for p in 0..positions {
                    mean += h[idx(s, p)];
                }
            }
            mean /= n;
            let mut var = 0.0;
            for s in 0..batch {
                for p in 0..positions {
                    let d = h[idx(s, p)] - mean;
                    var += d * d;
                }
            }
            var /= n;
            let sd = (var + self.eps).sqrt();
            std[c] = sd;
            for s in 0..batch {
                for p in 0..positions {
                    let k = idx(s, p);
                    xhat[k] = (h[k] - mean) / sd;
                    y[k] = self.gamma[c] * xhat[k] + self.beta[c];
                }
            }
            let unbiased = if n > 1.0 { var * n / (n - 1.0) } else { var };
            self.running_mean[c] = (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean;
            self.running_var[c] = (1.0 - self.momentum) * self.running_var[c] + self.momentum * unbiased;
        }
        (y, BnCache { xhat, std })
    }

    pub fn forward_eval(&self, h: &[f64], batch: usize, positions: usize) -> Vec<f64> {
        let ch = self.channels();
        let mut y = vec![0.0; h.len()];
        for s in 0..batch {
            for c in 0..ch {
                let base = (s * ch + c) * positions;
                for p in 0..positions {
                    y[base + p] = self.apply_eval(c, h[base + p]);
                }
            }
        }
        y
    }

    /// Backward of the train-mode forward. `extra_dxhat` adds a gradient that
    /// arrives directly at the normalized values (used by the hinge
    /// regularizer). Returns `(dh, dgamma, dbeta)`.
    pub fn backward_train(
        &self,
        dy: &[f64],
        cache: &BnCache,
        extra_dxhat: Option<&[f64]>,
        batch: usize,
        positions: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let ch = self.channels();
        let n = (batch * positions) as f64;
        let mut dh = vec![0.0; dy.len()];
        let mut dgamma = vec![0.0; ch];
        let mut dbeta = vec![0.0; ch];
        let mut dxhat = vec![0.0; batch * positions];
        for c in 0..ch {
            let idx = |s: usize, p: usize| (s * ch + c) * positions + p;
            let (mut sum_d, mut sum_dx) = (0.0, 0.0);
            for s in 0..batch {
                for p in 0..positions {
                    let k = idx(s, p);
                    dgamma[c] += dy[k] * cache.xhat[k];
                    dbeta[c] += dy[k];
                    let mut d = dy[k] * self.gamma[c];
                    if let Some(e) = extra_dxhat {
                        d += e[k];
                    }
                    dxhat[s * positions + p] = d;
                    sum_d += d;
                    sum_dx += d * cache.xhat[k];
                }
            }
            let (mean_d, mean_dx) = (sum_d / n, sum_dx / n);
            for s in 0..batch {
                for p in 0..positions {
                    let k = idx(s, p);
                    dh[k] = (dxhat[s * positions + p] - mean_d - cache.xhat[k] * mean_dx) / cache.std[c];
                }
            }
        }
        (dh, dgamma, dbeta)
    }
}
