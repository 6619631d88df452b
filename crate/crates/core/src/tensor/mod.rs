// SPDX-License-Identifier: Apache-2.0

//! Tensors and arithmetic kernels.
//!
//! Binary tensors pack one logical `{-1,+1}` element per bit (bit 1 is +1),
//! so a `±1` dot product is `len - 2 * popcount(a ^ b)`. Real tensors are
//! `f64`: every integer pre-activation a BNN can produce is exactly
//! representable, which lets the batched real path double as an exact
//! evaluator.

mod binary;
mod int;
pub mod kernels;
pub mod pool;
mod real;
pub mod real_ops;
mod shape;

pub use binary::{binarize, BinaryTensor, PackedRows};
pub use int::IntTensor;
pub use kernels::{binary_conv2d, binary_matmul, int_conv2d_first_layer, int_matmul_first_layer};
pub use pool::{maxpool2, pooled_extent, PoolMode};
pub use real::RealTensor;
pub use shape::Shape;

/// Largest number of summands a single accumulator may see. With inputs
/// bounded by 255 the first-layer sums stay far inside `i32`.
pub const MAX_FAN_IN: usize = 1 << 20;
