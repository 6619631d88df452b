// SPDX-License-Identifier: Apache-2.0

use super::{RealTensor, Shape};
use crate::{Error, Result};

/// Bit-packed tensor over `{-1,+1}`. Bit `i` of the flat row-major order is
/// stored in word `i / 64` at position `i % 64`; 1 means +1.
///
/// Padding bits past the element count are always zero, so equal tensors are
/// equal word for word.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryTensor {
    shape: Shape,
    words: Vec<u64>,
}

#[inline]
pub(crate) fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl BinaryTensor {
    /// All elements -1.
    pub fn minus_ones(shape: Shape) -> Self {
        let n = words_for(shape.numel());
        Self {
            shape,
            words: vec![0; n],
        }
    }

    pub fn from_fn(shape: Shape, mut positive: impl FnMut(usize) -> bool) -> Self {
        let mut t = Self::minus_ones(shape);
        for i in 0..t.len() {
            if positive(i) {
                t.words[i / 64] |= 1 << (i % 64);
            }
        }
        t
    }

    /// Builds from signs; any value `> 0` is +1, everything else -1.
    pub fn from_signs(shape: Shape, signs: &[i8]) -> Result<Self> {
        if signs.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "{} signs for shape {shape}",
                signs.len()
            )));
        }
        Ok(Self::from_fn(shape, |i| signs[i] > 0))
    }

    pub fn from_words(shape: Shape, words: Vec<u64>) -> Result<Self> {
        let n = shape.numel();
        if words.len() != words_for(n) {
            return Err(Error::Shape(format!(
                "{} words for {n} bits",
                words.len()
            )));
        }
        let t = Self { shape, words };
        if !t.padding_is_zero() {
            return Err(Error::format("binary tensor", "non-zero padding bits"));
        }
        Ok(t)
    }

    fn padding_is_zero(&self) -> bool {
        let tail = self.len() % 64;
        tail == 0 || self.words.last().is_none_or(|w| w >> tail == 0)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.shape.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    /// Logical value at flat index `i`, as `±1`.
    #[inline]
    pub fn get(&self, i: usize) -> i8 {
        if self.bit(i) {
            1
        } else {
            -1
        }
    }

    pub fn set(&mut self, i: usize, positive: bool) {
        let (w, b) = (i / 64, i % 64);
        if positive {
            self.words[w] |= 1 << b;
        } else {
            self.words[w] &= !(1 << b);
        }
    }

    pub fn negate_at(&mut self, i: usize) {
        self.words[i / 64] ^= 1 << (i % 64);
    }

    pub fn signs(&self) -> Vec<i8> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }

    pub fn unpack(&self) -> RealTensor {
        let data = (0..self.len()).map(|i| self.get(i) as f64).collect();
        RealTensor::from_parts(self.shape.clone(), data)
    }

    pub fn count_positive(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of positions where `self` and `other` differ.
    pub fn hamming(&self, other: &BinaryTensor) -> Result<usize> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{} vs {}", self.shape, other.shape)));
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Elementwise product with `other` (`±1 · ±1`), realized as XNOR.
    pub fn mul(&self, other: &BinaryTensor) -> Result<BinaryTensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{} vs {}", self.shape, other.shape)));
        }
        let mut words: Vec<u64> = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| !(a ^ b))
            .collect();
        let tail = self.len() % 64;
        if tail != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        Ok(BinaryTensor {
            shape: self.shape.clone(),
            words,
        })
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.len() {
            return Err(Error::Shape(format!("cannot reshape {} to {shape}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }
}

/// Element is +1 exactly where `x > 0`; zero maps to -1.
pub fn binarize(x: &RealTensor) -> BinaryTensor {
    let d = x.data();
    BinaryTensor::from_fn(x.shape().clone(), |i| d[i] > 0.0)
}

/// Row-aligned packing of a matrix: every row starts on a word boundary so
/// rows can be XOR-popcounted against each other directly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedRows {
    rows: usize,
    len: usize,
    stride: usize,
    words: Vec<u64>,
}

impl PackedRows {
    pub fn new(rows: usize, len: usize) -> Self {
        let stride = words_for(len);
        Self {
            rows,
            len,
            stride,
            words: vec![0; rows * stride],
        }
    }

    /// Treats `t` as a `dims[0] x rest` matrix.
    pub fn from_tensor(t: &BinaryTensor) -> Self {
        let (rows, len) = t.shape().rows_cols();
        let mut p = Self::new(rows, len);
        for r in 0..rows {
            for c in 0..len {
                if t.bit(r * len + c) {
                    p.set(r, c);
                }
            }
        }
        p
    }

    pub fn from_signs(rows: usize, len: usize, signs: &[i8]) -> Self {
        debug_assert_eq!(signs.len(), rows * len);
        let mut p = Self::new(rows, len);
        for r in 0..rows {
            for c in 0..len {
                if signs[r * len + c] > 0 {
                    p.set(r, c);
                }
            }
        }
        p
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize) {
        self.words[row * self.stride + col / 64] |= 1 << (col % 64);
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u64] {
        &self.words[r * self.stride..(r + 1) * self.stride]
    }

    /// `±1` dot product of row `r` with a packed vector of the same length.
    #[inline]
    pub fn dot_row(&self, r: usize, x: &[u64]) -> i32 {
        let diff: u32 = self
            .row(r)
            .iter()
            .zip(x)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum();
        self.len as i32 - 2 * diff as i32
    }
}
