// SPDX-License-Identifier: Apache-2.0

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Architecture, BatchNorm, BnCache, LayerSpec, NeuronShift};
use crate::channel::{apply_flips, sample_mask, BitErrorChannel, FlipMask, FlipMode};
use crate::tensor::kernels::{binary_conv2d_packed, int_conv2d_packed, int_matmul_packed, ConvGeom};
use crate::tensor::pool::{maxpool2_backward, maxpool2_planes};
use crate::tensor::real_ops::{conv2d_backward, conv2d_forward, linear_backward, linear_forward};
use crate::tensor::{binarize, BinaryTensor, IntTensor, PackedRows, RealTensor, Shape, MAX_FAN_IN};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Fc,
    Conv(ConvGeom),
}

/// One binary compute layer with its batch norm and optional pooling.
#[derive(Clone, Debug)]
pub struct Block {
    kind: BlockKind,
    in_shape: Shape,
    units: usize,
    pool: bool,
    latent: RealTensor,
    binary: BinaryTensor,
    packed: PackedRows,
    pub bn: BatchNorm,
}

impl Block {
    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn in_shape(&self) -> &Shape {
        &self.in_shape
    }

    pub fn in_len(&self) -> usize {
        self.in_shape.numel()
    }

    /// Output channels (filters) or units.
    pub fn units(&self) -> usize {
        self.units
    }

    pub fn fan_in(&self) -> usize {
        self.latent.len() / self.units
    }

    pub fn pooled(&self) -> bool {
        self.pool
    }

    /// `(U, V)` of the pre-activation map; `(1, 1)` for FC.
    pub fn map_size(&self) -> (usize, usize) {
        match self.kind {
            BlockKind::Fc => (1, 1),
            BlockKind::Conv(g) => (g.out_h(), g.out_w()),
        }
    }

    pub fn positions(&self) -> usize {
        let (u, v) = self.map_size();
        u * v
    }

    pub fn latent(&self) -> &RealTensor {
        &self.latent
    }

    /// Binary weights used by inference. Equal to `B(latent)` unless the
    /// block was corrupted by fault injection.
    pub fn binary(&self) -> &BinaryTensor {
        &self.binary
    }

    pub fn set_binary(&mut self, b: BinaryTensor) -> Result<()> {
        if b.shape() != self.latent.shape() {
            return Err(Error::Shape(format!(
                "binary weights {} for layer {}",
                b.shape(),
                self.latent.shape()
            )));
        }
        self.packed = pack(&b, self.units);
        self.binary = b;
        Ok(())
    }

    pub(crate) fn refresh_binary(&mut self) {
        let b = binarize(&self.latent);
        self.packed = pack(&b, self.units);
        self.binary = b;
    }

    pub(crate) fn set_latent(&mut self, latent: RealTensor) -> Result<()> {
        if latent.shape() != self.latent.shape() {
            return Err(Error::Shape(format!(
                "latent weights {} for layer {}",
                latent.shape(),
                self.latent.shape()
            )));
        }
        self.latent = latent;
        Ok(())
    }

    /// Per-sample output shape after pooling.
    pub fn out_shape(&self, pool_mode: crate::tensor::PoolMode) -> Result<Shape> {
        match self.kind {
            BlockKind::Fc => Shape::new(vec![self.units]),
            BlockKind::Conv(g) if self.pool => Shape::new(vec![
                self.units,
                crate::tensor::pooled_extent(g.out_h(), pool_mode)?,
                crate::tensor::pooled_extent(g.out_w(), pool_mode)?,
            ]),
            BlockKind::Conv(g) => Shape::new(vec![self.units, g.out_h(), g.out_w()]),
        }
    }

    fn weights_f64(&self, mask: Option<&FlipMask>) -> Vec<f64> {
        (0..self.binary.len())
            .map(|i| {
                let w = if self.binary.bit(i) { 1.0 } else { -1.0 };
                mask.map_or(w, |m| w * m.sign(i))
            })
            .collect()
    }
}

fn pack(b: &BinaryTensor, units: usize) -> PackedRows {
    let len = b.len() / units;
    let mut p = PackedRows::new(units, len);
    for r in 0..units {
        for c in 0..len {
            if b.bit(r * len + c) {
                p.set(r, c);
            }
        }
    }
    p
}

/// Per hidden layer record of an exact inference pass on one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceLayer {
    /// Integer pre-activations `[N, U, V]` (FC layers use `U = V = 1`).
    pub h: IntTensor,
    /// Sign outputs after pooling.
    pub activation: BinaryTensor,
    pub first: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub layers: Vec<TraceLayer>,
    /// Integer pre-activations of the output layer (before its batch norm).
    pub head_h: IntTensor,
}

#[derive(Clone, Debug)]
pub(crate) struct BlockCache {
    pub input: Vec<f64>,
    pub weights: Vec<f64>,
    pub mask: Option<FlipMask>,
    pub bn: BnCache,
    pub argmax: Option<Vec<usize>>,
    pub pre_pool_len: usize,
}

/// Cached intermediates of a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct TrainTrace {
    pub(crate) batch: usize,
    pub(crate) version: u64,
    pub(crate) flip_mode: FlipMode,
    pub(crate) blocks: Vec<BlockCache>,
    pub logits: Vec<f64>,
}

impl TrainTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Normalized pre-activations `[batch, N, positions]` of block `l`.
    pub fn xhat(&self, l: usize) -> &[f64] {
        &self.blocks[l].bn.xhat
    }

    /// Batch standard deviations of block `l`.
    pub fn batch_std(&self, l: usize) -> &[f64] {
        &self.blocks[l].bn.std
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockGrad {
    pub weights: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<BlockGrad>,
}

/// Gradient contributions that enter batch norm directly, per block.
#[derive(Clone, Debug, Default)]
pub struct ExtraBnGrad {
    pub dxhat: Vec<f64>,
    pub dgamma: Vec<f64>,
    pub dbeta: Vec<f64>,
}

/// A binarized network: weight layers, batch norms, sign activations and a
/// real-valued output layer.
#[derive(Clone, Debug)]
pub struct Network {
    arch: Architecture,
    z: i32,
    blocks: Vec<Block>,
    version: u64,
}

impl Network {
    /// Fresh network with latent weights uniform in `[-1, 1]` and identity
    /// batch norms. `z` is the largest input value.
    pub fn new(arch: Architecture, z: i32, seed: u64) -> Result<Self> {
        if z < 1 {
            return Err(Error::InvalidArgument(format!("input scale z = {z}")));
        }
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks: Vec<Block> = Vec::new();
        let mut shape = arch.input.clone();
        for spec in &arch.layers {
            let (kind, units, wshape) = match *spec {
                LayerSpec::MaxPool => {
                    let last = blocks.last_mut().expect("validated");
                    last.pool = true;
                    shape = last.out_shape(arch.pool_mode)?;
                    continue;
                }
                LayerSpec::Conv { filters, kernel } => {
                    let d = shape.dims();
                    if d.len() != 3 {
                        return Err(Error::Shape(format!("convolution over {shape}")));
                    }
                    let g = ConvGeom::new(d[0], d[1], d[2], kernel, kernel)?;
                    (BlockKind::Conv(g), filters, vec![filters, d[0], kernel, kernel])
                }
                LayerSpec::Fc { units } => (BlockKind::Fc, units, vec![units, shape.numel()]),
            };
            let wshape = Shape::new(wshape)?;
            let fan_in = wshape.numel() / units;
            if fan_in > MAX_FAN_IN {
                return Err(Error::Shape(format!("fan-in {fan_in} exceeds {MAX_FAN_IN}")));
            }
            let data = (0..wshape.numel()).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let latent = RealTensor::from_parts(wshape, data);
            let binary = binarize(&latent);
            let mut block = Block {
                kind,
                in_shape: shape.clone(),
                units,
                pool: false,
                packed: pack(&binary, units),
                latent,
                binary,
                bn: BatchNorm::new(units),
            };
            block.refresh_binary();
            shape = block.out_shape(arch.pool_mode)?;
            blocks.push(block);
        }
        Ok(Self {
            arch,
            z,
            blocks,
            version: 0,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn z(&self) -> i32 {
        self.z
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn input_len(&self) -> usize {
        self.arch.input.numel()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    /// Blocks followed by a sign activation (everything but the output layer).
    pub fn hidden(&self) -> &[Block] {
        &self.blocks[..self.blocks.len() - 1]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Number of sign-activated neurons (one per unit / filter).
    pub fn neuron_count(&self) -> usize {
        self.hidden().iter().map(|b| b.units).sum()
    }

    /// Re-derives the binary weights from the latent weights after a
    /// parameter update and invalidates outstanding traces.
    pub(crate) fn finish_update(&mut self) {
        for b in &mut self.blocks {
            b.refresh_binary();
        }
        self.version += 1;
    }

    /// Replaces latent weights (and re-binarizes). Used by checkpoint loading
    /// and tests.
    pub fn set_latent(&mut self, block: usize, latent: RealTensor) -> Result<()> {
        self.blocks
            .get_mut(block)
            .ok_or_else(|| Error::InvalidArgument(format!("no block {block}")))?
            .set_latent(latent)?;
        self.finish_update();
        Ok(())
    }

    pub fn set_binary(&mut self, block: usize, binary: BinaryTensor) -> Result<()> {
        self.blocks
            .get_mut(block)
            .ok_or_else(|| Error::InvalidArgument(format!("no block {block}")))?
            .set_binary(binary)
    }

    /// Mutable batch norm of `block`; invalidates outstanding traces.
    pub fn batch_norm_mut(&mut self, block: usize) -> Result<&mut BatchNorm> {
        if block >= self.blocks.len() {
            return Err(Error::InvalidArgument(format!("no block {block}")));
        }
        self.version += 1;
        Ok(&mut self.blocks[block].bn)
    }

    /// Folded integer thresholds of every hidden block.
    pub fn shifts(&self) -> Result<Vec<NeuronShift>> {
        self.hidden().iter().map(|b| b.bn.fold()).collect()
    }

    fn check_input(&self, x: &[i32]) -> Result<()> {
        match x.iter().find(|&&v| v < 0 || v > self.z) {
            Some(&v) => Err(Error::InputOutOfRange {
                value: v as i64,
                max: self.z as i64,
            }),
            None => Ok(()),
        }
    }

    /// Exact eval-mode inference on one sample using XNOR/popcount kernels.
    ///
    /// With `flips`, every binary weight tensor `l` is multiplied by a mask
    /// drawn from `flips.substream(l)` for this call only.
    pub fn forward(
        &self,
        x: &IntTensor,
        flips: Option<&BitErrorChannel>,
    ) -> Result<(RealTensor, ForwardTrace)> {
        if x.len() != self.input_len() {
            return Err(Error::Shape(format!("input {} for network input {}", x.shape(), self.arch.input)));
        }
        self.check_input(x.data())?;
        let shifts = self.shifts()?;
        let last = self.blocks.len() - 1;
        let mut layers = Vec::with_capacity(last);
        let mut act: Option<BinaryTensor> = None;
        for (l, block) in self.blocks.iter().enumerate() {
            let rows: Cow<'_, PackedRows> = match flips {
                Some(ch) if ch.p() > 0.0 => {
                    let m = sample_mask(&ch.substream(l as u64), block.binary.shape().clone());
                    Cow::Owned(pack(&apply_flips(&block.binary, &m)?, block.units))
                }
                _ => Cow::Borrowed(&block.packed),
            };
            let h = match (&act, block.kind) {
                (None, BlockKind::Fc) => IntTensor::from_parts(
                    Shape::of(&[block.units, 1, 1]),
                    int_matmul_packed(&rows, x.data()),
                ),
                (None, BlockKind::Conv(g)) => int_conv2d_packed(&rows, x.data(), &g, block.units),
                (Some(a), BlockKind::Fc) => IntTensor::from_parts(
                    Shape::of(&[block.units, 1, 1]),
                    (0..block.units).map(|n| rows.dot_row(n, a.words())).collect(),
                ),
                (Some(a), BlockKind::Conv(g)) => {
                    let a = a.clone().reshape(block.in_shape.clone())?;
                    binary_conv2d_packed(&rows, &a, &g, block.units)
                }
            };
            if l == last {
                let logits = (0..block.units)
                    .map(|n| block.bn.apply_eval(n, h.data()[n] as f64))
                    .collect();
                let logits = RealTensor::from_parts(Shape::of(&[block.units]), logits);
                return Ok((logits, ForwardTrace { layers, head_h: h }));
            }
            let pos = block.positions();
            let s = &shifts[l];
            let signs: Vec<i8> = h
                .data()
                .iter()
                .enumerate()
                .map(|(k, &v)| if s.fires(k / pos, v as i64) { 1 } else { -1 })
                .collect();
            let out_shape = block.out_shape(self.arch.pool_mode)?;
            let activation = if block.pool {
                let (u, v) = block.map_size();
                let (pooled, _) = maxpool2_planes(&signs, block.units, u, v, self.arch.pool_mode)?;
                BinaryTensor::from_signs(out_shape, &pooled)?
            } else {
                BinaryTensor::from_signs(out_shape, &signs)?
            };
            layers.push(TraceLayer {
                h,
                activation: activation.clone(),
                first: l == 0,
            });
            act = Some(activation);
        }
        unreachable!("network has an output layer")
    }

    /// Eval-mode logits for a batch of samples, computed with dense `f64`
    /// arithmetic. Integer pre-activations are exact, so this agrees with
    /// [`Network::forward`] bit for bit.
    pub fn predict(&self, x: &[i32], batch: usize) -> Result<Vec<f64>> {
        if x.len() != batch * self.input_len() {
            return Err(Error::Shape(format!(
                "{} inputs for batch {batch} of {}",
                x.len(),
                self.arch.input
            )));
        }
        self.check_input(x)?;
        let shifts = self.shifts()?;
        let last = self.blocks.len() - 1;
        let mut a: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        for (l, block) in self.blocks.iter().enumerate() {
            let w = block.weights_f64(None);
            let h = block_linear(block, &a, &w, batch);
            if l == last {
                return Ok(block.bn.forward_eval(&h, batch, block.positions()));
            }
            let pos = block.positions();
            let s = &shifts[l];
            let signs: Vec<f64> = h
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let n = (k / pos) % block.units;
                    if s.fires(n, v.round() as i64) {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect();
            a = if block.pool {
                let (u, v) = block.map_size();
                maxpool2_planes(&signs, batch * block.units, u, v, self.arch.pool_mode)?.0
            } else {
                signs
            };
        }
        unreachable!("network has an output layer")
    }

    /// Train-mode forward on a batch: batch statistics in every batch norm
    /// (running statistics are updated), optional per-block flip masks.
    pub fn forward_train(
        &mut self,
        x: &[i32],
        batch: usize,
        masks: Option<Vec<FlipMask>>,
        flip_mode: FlipMode,
    ) -> Result<TrainTrace> {
        if x.len() != batch * self.input_len() || batch == 0 {
            return Err(Error::Shape(format!("{} inputs for batch {batch}", x.len())));
        }
        self.check_input(x)?;
        if let Some(m) = &masks {
            if m.len() != self.blocks.len()
                || m.iter().zip(&self.blocks).any(|(m, b)| m.shape() != b.binary.shape())
            {
                return Err(Error::Shape("flip masks do not match the weight tensors".into()));
            }
        }
        let mut masks = masks.map(|m| m.into_iter().map(Some).collect::<Vec<_>>());
        let pool_mode = self.arch.pool_mode;
        let last = self.blocks.len() - 1;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut a: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut logits = Vec::new();
        for (l, block) in self.blocks.iter_mut().enumerate() {
            let mask = masks.as_mut().and_then(|m| m[l].take());
            let w = block.weights_f64(mask.as_ref());
            let h = block_linear(block, &a, &w, batch);
            let pos = block.positions();
            let (y, bn_cache) = block.bn.forward_train(&h, batch, pos);
            let pre_pool_len = y.len();
            let (y, argmax) = if block.pool {
                let (u, v) = block.map_size();
                let (p, idx) = maxpool2_planes(&y, batch * block.units, u, v, pool_mode)?;
                (p, Some(idx))
            } else {
                (y, None)
            };
            let input = std::mem::take(&mut a);
            caches.push(BlockCache {
                input,
                weights: w,
                mask,
                bn: bn_cache,
                argmax,
                pre_pool_len,
            });
            if l == last {
                logits = y;
            } else {
                a = y.iter().map(|&v| if v > 0.0 { 1.0 } else { -1.0 }).collect();
            }
        }
        Ok(TrainTrace {
            batch,
            version: self.version,
            flip_mode,
            blocks: caches,
            logits,
        })
    }

    /// Backpropagates `dlogits` (`[batch, classes]`). Sign activations and
    /// the binarization of weights pass gradients through unchanged; with
    /// native flip mode the weight gradient is additionally multiplied by the
    /// mask.
    pub fn backward(
        &self,
        trace: &TrainTrace,
        dlogits: &[f64],
        extra: Option<&[Option<ExtraBnGrad>]>,
    ) -> Result<Gradients> {
        if trace.version != self.version {
            return Err(Error::StaleTrace(format!(
                "trace from version {}, network at {}",
                trace.version, self.version
            )));
        }
        if trace.blocks.len() != self.blocks.len() || dlogits.len() != trace.logits.len() {
            return Err(Error::StaleTrace("layer or logit count differs".into()));
        }
        let batch = trace.batch;
        let mut grads = Vec::with_capacity(self.blocks.len());
        let mut g = dlogits.to_vec();
        for (l, (block, cache)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            let dy = match &cache.argmax {
                Some(idx) => maxpool2_backward(&g, idx, cache.pre_pool_len),
                None => g,
            };
            let ex = extra.and_then(|e| e.get(l)).and_then(|e| e.as_ref());
            let (dh, mut dgamma, mut dbeta) = block.bn.backward_train(
                &dy,
                &cache.bn,
                ex.map(|e| e.dxhat.as_slice()),
                batch,
                block.positions(),
            );
            if let Some(e) = ex {
                dgamma.iter_mut().zip(&e.dgamma).for_each(|(a, b)| *a += b);
                dbeta.iter_mut().zip(&e.dbeta).for_each(|(a, b)| *a += b);
            }
            let need_dx = l > 0;
            let (dx, mut dw) = match block.kind {
                BlockKind::Fc => {
                    let (dx, dw) = linear_backward(&dh, &cache.input, &cache.weights, batch, block.fan_in(), block.units);
                    (if need_dx { dx } else { Vec::new() }, dw)
                }
                BlockKind::Conv(geom) => {
                    conv2d_backward(&dh, &cache.input, &cache.weights, batch, &geom, block.units, need_dx)
                }
            };
            if let (FlipMode::Native, Some(m)) = (trace.flip_mode, &cache.mask) {
                dw.iter_mut().enumerate().for_each(|(i, d)| *d *= m.sign(i));
            }
            grads.push(BlockGrad {
                weights: dw,
                gamma: dgamma,
                beta: dbeta,
            });
            g = dx;
        }
        grads.reverse();
        Ok(Gradients { blocks: grads })
    }
}

fn block_linear(block: &Block, a: &[f64], w: &[f64], batch: usize) -> Vec<f64> {
    match block.kind {
        BlockKind::Fc => linear_forward(a, w, batch, block.fan_in(), block.units),
        BlockKind::Conv(g) => conv2d_forward(a, w, batch, &g, block.units),
    }
}
