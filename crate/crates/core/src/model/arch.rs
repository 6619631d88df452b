// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::tensor::{PoolMode, Shape};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Square `kernel x kernel` valid convolution with `filters` outputs.
    Conv { filters: usize, kernel: usize },
    /// 2x2 max pool; must directly follow a convolution.
    MaxPool,
    Fc { units: usize },
}

/// Layer sequence of a network. Every `Conv`/`Fc` is followed by batch
/// norm; all but the last are followed by the sign activation. The last
/// layer must be `Fc` with one unit per class and feeds softmax.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: Shape,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub pool_mode: PoolMode,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        match self.layers.last() {
            Some(LayerSpec::Fc { units }) if *units == self.classes => {}
            _ => {
                return Err(Error::Shape(format!(
                    "last layer must be FC with {} units",
                    self.classes
                )))
            }
        }
        let mut prev: Option<&LayerSpec> = None;
        for l in &self.layers {
            match l {
                LayerSpec::MaxPool if !matches!(prev, Some(LayerSpec::Conv { .. })) => {
                    return Err(Error::Shape("max pool must follow a convolution".into()))
                }
                LayerSpec::Conv { .. } if matches!(prev, Some(LayerSpec::Fc { .. })) => {
                    return Err(Error::Shape("convolution after a fully connected layer".into()))
                }
                LayerSpec::Conv { filters: 0, .. }
                | LayerSpec::Conv { kernel: 0, .. }
                | LayerSpec::Fc { units: 0 } => {
                    return Err(Error::Shape("zero-width layer".into()))
                }
                _ => {}
            }
            prev = Some(l);
        }
        Ok(())
    }

    /// Widths of the weight layers in order, e.g. `[784, 2048, 2048, 10]`
    /// for an MLP (input size first).
    pub fn describe(&self) -> String {
        let mut parts = vec![format!("In{}", self.input)];
        for l in &self.layers {
            parts.push(match l {
                LayerSpec::Conv { filters, kernel } => format!("C{filters}k{kernel}"),
                LayerSpec::MaxPool => "MP2".into(),
                LayerSpec::Fc { units } => format!("FC{units}"),
            });
        }
        parts.join(" -> ")
    }
}
