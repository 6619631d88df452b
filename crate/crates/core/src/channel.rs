// SPDX-License-Identifier: Apache-2.0

//! Random weight sign flips.
//!
//! A [`FlipMask`] is a `±1` tensor (-1 = flip) multiplied elementwise into
//! binary weights. Masks are pure functions of `(seed, stream_id, shape)`.

use serde::{Deserialize, Serialize};

use crate::model::Network;
use crate::rng::{derive, CounterRng};
use crate::tensor::{BinaryTensor, Shape};
use crate::{Error, Result};

/// How a flip mask enters the backward pass during flip training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipMode {
    #[default]
    None,
    /// Gradient w.r.t. the clean binary weights is `M * grad(corrupted)`.
    Native,
    /// The flip operator is treated as identity: gradient w.r.t. the clean
    /// binary weights is `grad(corrupted)`.
    StraightThrough,
}

impl FlipMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FlipMode::None),
            "native" => Ok(FlipMode::Native),
            "straight_through" | "straight-through" | "ste" => Ok(FlipMode::StraightThrough),
            other => Err(Error::InvalidArgument(format!("unknown flip mode `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FlipMode::None => "none",
            FlipMode::Native => "native",
            FlipMode::StraightThrough => "straight_through",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitErrorChannel {
    p: f64,
    pub seed: u64,
    pub stream_id: u64,
}

impl BitErrorChannel {
    pub fn new(p: f64, seed: u64, stream_id: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("flip probability {p} outside [0, 1]")));
        }
        Ok(Self { p, seed, stream_id })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Same probability and seed on a derived stream.
    pub fn substream(&self, label: u64) -> Self {
        Self {
            stream_id: derive(self.stream_id, label),
            ..*self
        }
    }
}

/// Mask over a weight tensor; bit 1 (+1) keeps, bit 0 (-1) flips.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FlipMask(BinaryTensor);

impl FlipMask {
    pub fn keep_all(shape: Shape) -> Self {
        FlipMask(BinaryTensor::from_fn(shape, |_| true))
    }

    pub fn from_tensor(t: BinaryTensor) -> Self {
        FlipMask(t)
    }

    pub fn as_tensor(&self) -> &BinaryTensor {
        &self.0
    }

    pub fn shape(&self) -> &Shape {
        self.0.shape()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn flips(&self) -> usize {
        self.0.len() - self.0.count_positive()
    }

    #[inline]
    pub fn is_flip(&self, i: usize) -> bool {
        !self.0.bit(i)
    }

    /// `±1` value of entry `i`.
    #[inline]
    pub fn sign(&self, i: usize) -> f64 {
        if self.0.bit(i) {
            1.0
        } else {
            -1.0
        }
    }
}

/// i.i.d. mask with `P(flip) = p`.
pub fn sample_mask(ch: &BitErrorChannel, shape: Shape) -> FlipMask {
    let rng = CounterRng::new(ch.seed, ch.stream_id);
    let p = ch.p;
    FlipMask(BinaryTensor::from_fn(shape, |i| !rng.bernoulli_at(i as u64, p)))
}

/// `w * m` elementwise.
pub fn apply_flips(w: &BinaryTensor, m: &FlipMask) -> Result<BinaryTensor> {
    w.mul(&m.0)
}

/// A corrupted copy of `graph`: every binary weight tensor gets its own
/// mask drawn at `rate`. Latent weights and batch norm are untouched, and the
/// mask is fixed for everything evaluated on the returned network.
pub fn inject_persistent(graph: &Network, rate: f64, trial_seed: u64) -> Result<Network> {
    let base = BitErrorChannel::new(rate, trial_seed, 0)?;
    let mut out = graph.clone();
    for (l, block) in out.blocks_mut().iter_mut().enumerate() {
        let mask = sample_mask(&base.substream(l as u64), block.binary().shape().clone());
        let corrupted = apply_flips(block.binary(), &mask)?;
        block.set_binary(corrupted)?;
    }
    Ok(out)
}
