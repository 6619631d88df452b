// SPDX-License-Identifier: Apache-2.0

//! 2x2 non-overlapping max pooling over the last two dimensions.

use serde::{Deserialize, Serialize};

use super::{IntTensor, RealTensor, Shape};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolMode {
    /// Odd spatial extents are an error.
    Strict,
    /// An odd trailing row/column forms a partial window (no padding value
    /// is introduced; the max is taken over the elements that exist).
    #[default]
    Ceil,
}

pub fn pooled_extent(n: usize, mode: PoolMode) -> Result<usize> {
    match mode {
        PoolMode::Strict if n % 2 != 0 => {
            Err(Error::Shape(format!("odd spatial extent {n} in strict pooling")))
        }
        _ => Ok(n.div_ceil(2)),
    }
}

/// Pools `planes` stacked `h x w` maps. Returns the pooled values and, per
/// output, the flat input index of the maximum; ties go to the lowest index.
pub fn maxpool2_planes<T: PartialOrd + Copy>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    mode: PoolMode,
) -> Result<(Vec<T>, Vec<usize>)> {
    debug_assert_eq!(x.len(), planes * h * w);
    let (oh, ow) = (pooled_extent(h, mode)?, pooled_extent(w, mode)?);
    let mut vals = Vec::with_capacity(planes * oh * ow);
    let mut idx = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for di in 0..2 {
                    for dj in 0..2 {
                        let (r, c) = (2 * i + di, 2 * j + dj);
                        if r < h && c < w {
                            let k = base + r * w + c;
                            if x[k] > x[best] {
                                best = k;
                            }
                        }
                    }
                }
                vals.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((vals, idx))
}

/// Routes each output gradient to its recorded argmax.
pub fn maxpool2_backward(grad_out: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut g = vec![0.0; input_len];
    for (&d, &k) in grad_out.iter().zip(argmax) {
        g[k] += d;
    }
    g
}

fn split_spatial(shape: &Shape) -> Result<(usize, usize, usize)> {
    let d = shape.dims();
    if d.len() < 2 {
        return Err(Error::Shape(format!("pooling needs a spatial map, got {shape}")));
    }
    let (h, w) = (d[d.len() - 2], d[d.len() - 1]);
    Ok((shape.numel() / (h * w), h, w))
}

fn pooled_shape(shape: &Shape, mode: PoolMode) -> Result<Shape> {
    let mut d = shape.dims().to_vec();
    let r = d.len();
    d[r - 2] = pooled_extent(d[r - 2], mode)?;
    d[r - 1] = pooled_extent(d[r - 1], mode)?;
    Shape::new(d)
}

pub trait MaxPool2: Sized {
    fn maxpool2(&self, mode: PoolMode) -> Result<Self>;
}

impl MaxPool2 for IntTensor {
    fn maxpool2(&self, mode: PoolMode) -> Result<Self> {
        let (planes, h, w) = split_spatial(self.shape())?;
        let (v, _) = maxpool2_planes(self.data(), planes, h, w, mode)?;
        Ok(IntTensor::from_parts(pooled_shape(self.shape(), mode)?, v))
    }
}

impl MaxPool2 for RealTensor {
    fn maxpool2(&self, mode: PoolMode) -> Result<Self> {
        let (planes, h, w) = split_spatial(self.shape())?;
        let (v, _) = maxpool2_planes(self.data(), planes, h, w, mode)?;
        Ok(RealTensor::from_parts(pooled_shape(self.shape(), mode)?, v))
    }
}

pub fn maxpool2<T: MaxPool2>(x: &T, mode: PoolMode) -> Result<T> {
    x.maxpool2(mode)
}
