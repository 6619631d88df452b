// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub cross_entropy: f64,
    /// Unweighted regularizer value.
    pub reg_penalty: f64,
    pub lambda: f64,
}

impl LossValue {
    pub fn total(&self) -> f64 {
        self.cross_entropy + self.lambda * self.reg_penalty
    }
}

/// Mean softmax cross-entropy over a `[batch, classes]` logit matrix, and its
/// gradient `(softmax - onehot) / batch`.
pub fn cross_entropy_loss(logits: &[f64], labels: &[usize], classes: usize) -> Result<(f64, Vec<f64>)> {
    let batch = labels.len();
    if batch == 0 || logits.len() != batch * classes {
        return Err(Error::Shape(format!(
            "{} logits for {batch} labels x {classes} classes",
            logits.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        let row = &logits[s * classes..(s + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        for (c, g) in grad[s * classes..(s + 1) * classes].iter_mut().enumerate() {
            let p = (row[c] - log_z).exp();
            *g = (p - if c == y { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    Ok((loss / batch as f64, grad))
}
