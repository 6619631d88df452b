// SPDX-License-Identifier: Apache-2.0

//! `--data` strings: `synth:two-gaussians`, `synth:checkerboard`,
//! `fashion:DIR` (IDX files) or `cifar10:DIR` (binary batches).

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use bnn_bet::data::{load_cifar10_dir, load_fashion_mnist, synthesize_split, Dataset, Split, SynthKind};
use bnn_bet::tensor::Shape;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Pixel range of synthetic sets.
pub const SYNTH_Z: i32 = 255;

#[derive(Clone, Debug, PartialEq)]
pub enum DataSpec {
    Synth(SynthKind),
    Fashion(PathBuf),
    Cifar10(PathBuf),
}

impl FromStr for DataSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| format!("data `{s}`: expected synth:NAME, fashion:DIR or cifar10:DIR"))?;
        match kind {
            "synth" => SynthKind::parse(arg).map(DataSpec::Synth).map_err(|e| e.to_string()),
            "fashion" => Ok(DataSpec::Fashion(arg.into())),
            "cifar10" => Ok(DataSpec::Cifar10(arg.into())),
            other => Err(format!("unknown data source `{other}`")),
        }
    }
}

impl fmt::Display for DataSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSpec::Synth(SynthKind::TwoGaussians) => write!(f, "synth:two-gaussians"),
            DataSpec::Synth(SynthKind::Checkerboard) => write!(f, "synth:checkerboard"),
            DataSpec::Fashion(p) => write!(f, "fashion:{}", p.display()),
            DataSpec::Cifar10(p) => write!(f, "cifar10:{}", p.display()),
        }
    }
}

/// What the manifest records about a loaded split.
#[derive(Clone, Debug, Serialize)]
pub struct DataInfo {
    pub spec: String,
    pub split: Split,
    pub samples: usize,
    pub sample_shape: Vec<usize>,
    pub z: i32,
}

impl DataInfo {
    pub fn of(spec: &DataSpec, ds: &Dataset) -> Self {
        Self {
            spec: spec.to_string(),
            split: ds.split,
            samples: ds.len(),
            sample_shape: ds.sample_shape().dims().to_vec(),
            z: ds.z(),
        }
    }
}

/// Loads one split, keeping at most `cap` samples (0 keeps all). Synthetic
/// sets are generated with `shape`; both splits share the task drawn from
/// `seed`.
pub fn load_split(spec: &DataSpec, split: Split, cap: usize, seed: u64, shape: &Shape, z: i32) -> CliResult<Dataset> {
    let ds = match spec {
        DataSpec::Synth(kind) => {
            if cap == 0 {
                return Err(CliError::Config("synthetic data needs a positive sample count".into()));
            }
            synthesize_split(*kind, cap.max(2), seed, split, z, shape)?
        }
        DataSpec::Fashion(dir) => load_fashion_mnist(dir, split)?,
        DataSpec::Cifar10(dir) => load_cifar10_dir(dir, split)?,
    };
    if ds.sample_shape() != *shape {
        return Err(CliError::Config(format!(
            "{spec} has samples {} but the model expects {shape}",
            ds.sample_shape()
        )));
    }
    Ok(if cap > 0 && cap < ds.len() { ds.head(cap) } else { ds })
}
