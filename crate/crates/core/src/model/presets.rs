// SPDX-License-Identifier: Apache-2.0

//! Named architectures. The full-size presets use 3x3 valid convolutions.

use super::{Architecture, LayerSpec};
use crate::tensor::{PoolMode, Shape};
use crate::{Error, Result};

pub const PRESETS: [&str; 5] = ["fashion-fcnn", "fashion-cnn", "cifar10-cnn", "tiny-fcnn", "tiny-cnn"];

/// Parses `0.125`, `1/8` or `1`.
pub fn parse_width_scale(s: &str) -> Result<f64> {
    let bad = || Error::InvalidArgument(format!("bad width scale `{s}`"));
    let v = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            n / d
        }
        None => s.trim().parse().map_err(|_| bad())?,
    };
    if !(v.is_finite() && v > 0.0) {
        return Err(bad());
    }
    Ok(v)
}

fn scaled(width: usize, scale: f64) -> usize {
    ((width as f64 * scale).round() as usize).max(1)
}

pub fn build_preset(name: &str, width_scale: f64) -> Result<Architecture> {
    if !(width_scale.is_finite() && width_scale > 0.0) {
        return Err(Error::InvalidArgument(format!("width scale {width_scale}")));
    }
    let w = |n| scaled(n, width_scale);
    let conv = |n| LayerSpec::Conv { filters: w(n), kernel: 3 };
    let fc = |n| LayerSpec::Fc { units: w(n) };
    let (input, classes, layers) = match name {
        "fashion-fcnn" => (vec![1, 28, 28], 10, vec![fc(2048), fc(2048)]),
        "fashion-cnn" => (
            vec![1, 28, 28],
            10,
            vec![conv(64), LayerSpec::MaxPool, conv(64), LayerSpec::MaxPool, fc(2048), fc(2048)],
        ),
        "cifar10-cnn" => (
            vec![3, 32, 32],
            10,
            vec![
                conv(128),
                conv(128),
                LayerSpec::MaxPool,
                conv(256),
                conv(256),
                LayerSpec::MaxPool,
                conv(256),
                conv(256),
                LayerSpec::MaxPool,
                fc(2048),
                fc(2048),
            ],
        ),
        "tiny-fcnn" => (vec![1, 4, 4], 2, vec![fc(8)]),
        "tiny-cnn" => (vec![1, 8, 8], 2, vec![conv(4), LayerSpec::MaxPool, fc(8)]),
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    let mut layers = layers;
    layers.push(LayerSpec::Fc { units: classes });
    let arch = Architecture {
        input: Shape::new(input)?,
        classes,
        layers,
        pool_mode: PoolMode::Ceil,
    };
    arch.validate()?;
    Ok(arch)
}
