// SPDX-License-Identifier: Apache-2.0

//! Layer graphs of binarized networks.

mod arch;
mod batchnorm;
pub mod checkpoint;
mod network;
pub mod presets;

pub use arch::{Architecture, LayerSpec};
pub use batchnorm::{BatchNorm, BnCache, NeuronShift, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use network::{
    Block, BlockGrad, BlockKind, ExtraBnGrad, ForwardTrace, Gradients, Network, TraceLayer, TrainTrace,
};
pub use presets::{build_preset, parse_width_scale};
