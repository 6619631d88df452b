// SPDX-License-Identifier: Apache-2.0

//! Exact integer kernels for binary layers.
//!
//! Convolutions are valid (unpadded) cross-correlations with stride 1, so
//! every summand of a binary layer is `±1`.

use super::binary::words_for;
use super::{BinaryTensor, IntTensor, PackedRows, Shape, MAX_FAN_IN};
use crate::{Error, Result};

fn check_fan_in(k: usize) -> Result<()> {
    if k > MAX_FAN_IN {
        return Err(Error::Shape(format!("fan-in {k} exceeds {MAX_FAN_IN}")));
    }
    Ok(())
}

/// `w: [out, in]` times `x: [in]`, via XOR + popcount.
pub fn binary_matmul(w: &BinaryTensor, x: &BinaryTensor) -> Result<IntTensor> {
    let (out, fan_in) = w.shape().rows_cols();
    if x.len() != fan_in {
        return Err(Error::Shape(format!(
            "weights {} against input {}",
            w.shape(),
            x.shape()
        )));
    }
    check_fan_in(fan_in)?;
    let rows = PackedRows::from_tensor(w);
    // x is a single row so its canonical packing is already row-aligned.
    let h = (0..out).map(|n| rows.dot_row(n, x.words())).collect();
    Ok(IntTensor::from_parts(Shape::of(&[out]), h))
}

/// Geometry of a valid convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, height: usize, width: usize, kh: usize, kw: usize) -> Result<Self> {
        if kh == 0 || kw == 0 || kh > height || kw > width {
            return Err(Error::Shape(format!(
                "{kh}x{kw} kernel does not fit a {height}x{width} input"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            kh,
            kw,
        })
    }

    pub fn out_h(&self) -> usize {
        self.height - self.kh + 1
    }

    pub fn out_w(&self) -> usize {
        self.width - self.kw + 1
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Flat input index of patch element `k` (ordered `c, i, j`) at output `(u, v)`.
    #[inline]
    pub fn input_index(&self, u: usize, v: usize, k: usize) -> usize {
        let c = k / (self.kh * self.kw);
        let r = k % (self.kh * self.kw);
        let (i, j) = (r / self.kw, r % self.kw);
        (c * self.height + u + i) * self.width + v + j
    }

    fn from_shapes(w: &Shape, x: &Shape) -> Result<(usize, Self)> {
        let (wd, xd) = (w.dims(), x.dims());
        if wd.len() != 4 || xd.len() != 3 || wd[1] != xd[0] {
            return Err(Error::Shape(format!("conv weights {w} against input {x}")));
        }
        let g = ConvGeom::new(xd[0], xd[1], xd[2], wd[2], wd[3])?;
        check_fan_in(g.patch_len())?;
        Ok((wd[0], g))
    }
}

/// Packs every receptive field of `x` into its own row.
pub(crate) fn binary_patches(x: &BinaryTensor, g: &ConvGeom) -> PackedRows {
    let (ou, ov) = (g.out_h(), g.out_w());
    let mut p = PackedRows::new(ou * ov, g.patch_len());
    for u in 0..ou {
        for v in 0..ov {
            for k in 0..g.patch_len() {
                if x.bit(g.input_index(u, v, k)) {
                    p.set(u * ov + v, k);
                }
            }
        }
    }
    p
}

/// `w: [F, C, Kh, Kw]` correlated with `x: [C, H, W]` -> `[F, U, V]`.
pub fn binary_conv2d(w: &BinaryTensor, x: &BinaryTensor) -> Result<IntTensor> {
    let (filters, g) = ConvGeom::from_shapes(w.shape(), x.shape())?;
    let rows = PackedRows::from_tensor(w);
    Ok(binary_conv2d_packed(&rows, x, &g, filters))
}

pub(crate) fn binary_conv2d_packed(
    filters: &PackedRows,
    x: &BinaryTensor,
    g: &ConvGeom,
    n_filters: usize,
) -> IntTensor {
    let patches = binary_patches(x, g);
    let pos = g.positions();
    debug_assert_eq!(words_for(g.patch_len()), patches.row(0).len());
    let mut h = vec![0i32; n_filters * pos];
    for f in 0..n_filters {
        for p in 0..pos {
            h[f * pos + p] = filters.dot_row(f, patches.row(p));
        }
    }
    IntTensor::from_parts(Shape::of(&[n_filters, g.out_h(), g.out_w()]), h)
}

#[inline]
fn signed_sum(rows: &PackedRows, r: usize, x: &[i32]) -> i32 {
    let row = rows.row(r);
    let mut acc = 0i32;
    for (k, &v) in x.iter().enumerate() {
        if (row[k / 64] >> (k % 64)) & 1 == 1 {
            acc += v;
        } else {
            acc -= v;
        }
    }
    acc
}

/// First fully connected layer: `±1` weights against integer inputs in `[0, z]`.
pub fn int_matmul_first_layer(w: &BinaryTensor, x: &IntTensor, z: i32) -> Result<IntTensor> {
    let (out, fan_in) = w.shape().rows_cols();
    if x.len() != fan_in {
        return Err(Error::Shape(format!(
            "weights {} against input {}",
            w.shape(),
            x.shape()
        )));
    }
    check_fan_in(fan_in)?;
    x.check_range(z)?;
    let rows = PackedRows::from_tensor(w);
    let h = (0..out).map(|n| signed_sum(&rows, n, x.data())).collect();
    Ok(IntTensor::from_parts(Shape::of(&[out]), h))
}

/// First convolution layer: `±1` filters against integer inputs in `[0, z]`.
pub fn int_conv2d_first_layer(w: &BinaryTensor, x: &IntTensor, z: i32) -> Result<IntTensor> {
    let (filters, g) = ConvGeom::from_shapes(w.shape(), x.shape())?;
    x.check_range(z)?;
    let rows = PackedRows::from_tensor(w);
    Ok(int_conv2d_packed(&rows, x.data(), &g, filters))
}

pub(crate) fn int_conv2d_packed(
    filters: &PackedRows,
    x: &[i32],
    g: &ConvGeom,
    n_filters: usize,
) -> IntTensor {
    let (ou, ov) = (g.out_h(), g.out_w());
    let pos = ou * ov;
    let mut patch = vec![0i32; g.patch_len()];
    let mut h = vec![0i32; n_filters * pos];
    for u in 0..ou {
        for v in 0..ov {
            for (k, p) in patch.iter_mut().enumerate() {
                *p = x[g.input_index(u, v, k)];
            }
            for f in 0..n_filters {
                h[f * pos + u * ov + v] = signed_sum(filters, f, &patch);
            }
        }
    }
    IntTensor::from_parts(Shape::of(&[n_filters, ou, ov]), h)
}

pub(crate) fn int_matmul_packed(rows: &PackedRows, x: &[i32]) -> Vec<i32> {
    (0..rows.rows()).map(|n| signed_sum(rows, n, x)).collect()
}
