// SPDX-License-Identifier: Apache-2.0

//! Accuracy and fault-injection sweeps.

use serde::{Deserialize, Serialize};

use crate::channel::inject_persistent;
use crate::data::Dataset;
use crate::model::Network;
use crate::rng::derive;
use crate::{Error, Result};

const EVAL_CHUNK: usize = 500;

/// Index of the largest logit; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode accuracy in percent.
pub fn accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ds.sample_len() != net.input_len() || ds.classes() > net.classes() {
        return Err(Error::Shape(format!(
            "dataset {} / {} classes for network {}",
            ds.sample_shape(),
            ds.classes(),
            net.architecture().input
        )));
    }
    let c = net.classes();
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let logits = net.predict(&ds.gather(chunk), chunk.len())?;
        correct += chunk
            .iter()
            .enumerate()
            .filter(|&(k, &i)| argmax(&logits[k * c..(k + 1) * c]) == ds.labels()[i])
            .count();
    }
    Ok(100.0 * correct as f64 / ds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate_pct: f64,
    pub trial: usize,
    pub accuracy_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rate_pct: f64,
    pub mean: f64,
    /// `(max - min) / 2` over trials.
    pub half_range: f64,
    pub std: f64,
}

/// Seed of trial `trial` at rate index `rate_idx`.
pub fn trial_seed(seed: u64, rate_idx: usize, trial: usize) -> u64 {
    derive(derive(seed, rate_idx as u64), trial as u64)
}

/// For every rate (in percent) and trial: corrupt a copy of `net` with a
/// persistent mask, evaluate the whole dataset. Rows come back ordered by
/// `(rate, trial)`.
pub fn sweep(net: &Network, ds: &Dataset, rates_pct: &[f64], trials: usize, seed: u64) -> Result<Vec<SweepRow>> {
    if let Some(r) = rates_pct.iter().find(|r| !(0.0..=100.0).contains(*r)) {
        return Err(Error::InvalidArgument(format!("bit error rate {r}% outside [0, 100]")));
    }
    let jobs: Vec<(usize, usize)> = (0..rates_pct.len())
        .flat_map(|r| (0..trials).map(move |t| (r, t)))
        .collect();
    let run = |&(r, t): &(usize, usize)| -> Result<SweepRow> {
        let corrupted = inject_persistent(net, rates_pct[r] / 100.0, trial_seed(seed, r, t))?;
        Ok(SweepRow {
            rate_pct: rates_pct[r],
            trial: t,
            accuracy_pct: accuracy(&corrupted, ds)?,
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(run).collect()
    }
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut out: Vec<SweepSummary> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let rate = rows[i].rate_pct;
        let group: Vec<f64> = rows[i..]
            .iter()
            .take_while(|r| r.rate_pct == rate)
            .map(|r| r.accuracy_pct)
            .collect();
        i += group.len();
        let n = group.len() as f64;
        let mean = group.iter().sum::<f64>() / n;
        let max = group.iter().cloned().fold(f64::MIN, f64::max);
        let min = group.iter().cloned().fold(f64::MAX, f64::min);
        let var = group.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        out.push(SweepSummary {
            rate_pct: rate,
            mean,
            half_range: (max - min) / 2.0,
            std: var.sqrt(),
        });
    }
    out
}

/// Default rate grid: 0.0% to 10.0% in steps of 0.5%.
pub fn default_rates_pct() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.5).collect()
}
