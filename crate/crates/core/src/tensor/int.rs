// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::Shape;
use crate::{Error, Result};

/// Exact integer tensor: pre-activation sums and quantized inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntTensor {
    shape: Shape,
    data: Vec<i32>,
}

impl IntTensor {
    pub fn new(shape: Shape, data: Vec<i32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "{} values for shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<i32>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Fails unless every value lies in `[0, z]`.
    pub fn check_range(&self, z: i32) -> Result<()> {
        match self.data.iter().find(|&&v| v < 0 || v > z) {
            Some(&v) => Err(Error::InputOutOfRange {
                value: v as i64,
                max: z as i64,
            }),
            None => Ok(()),
        }
    }
}
