// SPDX-License-Identifier: Apache-2.0

//! Binarized neural networks with bit error tolerance tooling.
//!
//! The crate covers the full loop for studying how BNN weights stored in
//! unreliable memory behave under random sign flips:
//!
//! - [`tensor`]: dense real tensors, bit-packed `{-1,+1}` tensors and the
//!   XNOR/popcount kernels that evaluate them exactly.
//! - [`model`]: layer graphs, batch norm with folding into integer thresholds,
//!   straight-through backpropagation and checkpoints.
//! - [`channel`]: seeded flip masks, both per-step (training) and persistent
//!   (evaluation sweeps).
//! - [`tolerance`]: the distance-to-threshold tolerance metric `T^b` and a
//!   brute-force checker for the flip-budget guarantee it implies.
//! - [`train`]: loss, Adam, flip regularization (native and straight-through)
//!   and the direct hinge regularizer.
//! - [`data`]: IDX / CIFAR-10 binary loaders and synthetic datasets.
//! - [`eval`]: accuracy and fault-injection sweeps.

pub mod channel;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod tolerance;
pub mod train;

pub use error::{Error, Result};
