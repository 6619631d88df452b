// SPDX-License-Identifier: Apache-2.0

//! Datasets with integer pixels in `{0, ..., z}`.
//!
//! No normalization is applied: first-layer pre-activations stay integral.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::derive;
use crate::tensor::{IntTensor, Shape};
use crate::{Error, Result};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[n, C, H, W]`.
    images: IntTensor,
    labels: Vec<usize>,
    classes: usize,
    z: i32,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        sample_shape: &Shape,
        pixels: Vec<i32>,
        labels: Vec<usize>,
        classes: usize,
        z: i32,
        split: Split,
    ) -> Result<Self> {
        let mut dims = vec![labels.len()];
        dims.extend_from_slice(sample_shape.dims());
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let images = IntTensor::new(Shape::new(dims)?, pixels)?;
        images.check_range(z)?;
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self {
            images,
            labels,
            classes,
            z,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn z(&self) -> i32 {
        self.z
    }

    pub fn sample_shape(&self) -> Shape {
        Shape::new(self.images.shape().dims()[1..].to_vec()).expect("valid")
    }

    pub fn sample_len(&self) -> usize {
        self.images.len() / self.len()
    }

    pub fn images(&self) -> &IntTensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[i32] {
        let d = self.sample_len();
        &self.images.data()[i * d..(i + 1) * d]
    }

    pub fn image_tensor(&self, i: usize) -> IntTensor {
        IntTensor::new(self.sample_shape(), self.image(i).to_vec()).expect("valid")
    }

    /// Pixels of the given samples, concatenated.
    pub fn gather(&self, idx: &[usize]) -> Vec<i32> {
        let mut out = Vec::with_capacity(idx.len() * self.sample_len());
        for &i in idx {
            out.extend_from_slice(self.image(i));
        }
        out
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len()).max(1);
        let d = self.sample_len();
        Dataset::new(
            &self.sample_shape(),
            self.images.data()[..n * d].to_vec(),
            self.labels[..n].to_vec(),
            self.classes,
            self.z,
            self.split,
        )
        .expect("subset of a valid dataset")
    }
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(b[at..at + 4].try_into().unwrap())
}

/// Reads an IDX image file; returns `(rows, cols, pixels)` per image.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let b = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&b)
}

pub fn parse_idx_images(b: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    if b.len() < 16 {
        return Err(Error::format("IDX images", "truncated header"));
    }
    if be_u32(b, 0) != IDX_IMAGES {
        return Err(Error::format("IDX images", format!("bad magic {:#010x}", be_u32(b, 0))));
    }
    let (n, rows, cols) = (be_u32(b, 4) as usize, be_u32(b, 8) as usize, be_u32(b, 12) as usize);
    let need = n * rows * cols;
    if b.len() - 16 != need {
        return Err(Error::format(
            "IDX images",
            format!("{} pixel bytes, header says {need}", b.len() - 16),
        ));
    }
    Ok((n, rows, cols, b[16..].to_vec()))
}

pub fn parse_idx_labels(b: &[u8]) -> Result<Vec<u8>> {
    if b.len() < 8 {
        return Err(Error::format("IDX labels", "truncated header"));
    }
    if be_u32(b, 0) != IDX_LABELS {
        return Err(Error::format("IDX labels", format!("bad magic {:#010x}", be_u32(b, 0))));
    }
    let n = be_u32(b, 4) as usize;
    if b.len() - 8 != n {
        return Err(Error::format("IDX labels", format!("{} label bytes, header says {n}", b.len() - 8)));
    }
    Ok(b[8..].to_vec())
}

/// Loads an IDX image/label pair as a 10-class dataset with `z = 255`.
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let (n, rows, cols, px) = read_idx_images(images)?;
    let lb = fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let lb = parse_idx_labels(&lb)?;
    if lb.len() != n {
        return Err(Error::format("IDX pair", format!("{n} images but {} labels", lb.len())));
    }
    let shape = Shape::new(vec![1, rows, cols])?;
    Dataset::new(
        &shape,
        px.into_iter().map(i32::from).collect(),
        lb.into_iter().map(usize::from).collect(),
        10,
        255,
        split,
    )
}

/// Loads `train-*` or `t10k-*` files from a FashionMNIST directory.
pub fn load_fashion_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Parses CIFAR-10 binary records (label byte + 3072 channel-major pixels).
pub fn parse_cifar10(b: &[u8], split: Split) -> Result<Dataset> {
    if b.is_empty() || b.len() % CIFAR_RECORD != 0 {
        return Err(Error::format(
            "CIFAR-10 batch",
            format!("length {} is not a positive multiple of {CIFAR_RECORD}", b.len()),
        ));
    }
    let n = b.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut px = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for rec in b.chunks_exact(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(Error::LabelOutOfRange { label: rec[0] as usize, classes: 10 });
        }
        labels.push(rec[0] as usize);
        px.extend(rec[1..].iter().map(|&v| v as i32));
    }
    Dataset::new(&Shape::new(vec![3, 32, 32])?, px, labels, 10, 255, split)
}

pub fn load_cifar10_binary(paths: &[&Path], split: Split) -> Result<Dataset> {
    let mut all = Vec::new();
    for p in paths {
        let b = fs::read(p).map_err(|e| Error::io(*p, e))?;
        if b.len() % CIFAR_RECORD != 0 {
            return Err(Error::format("CIFAR-10 batch", format!("{}: truncated record", p.display())));
        }
        all.extend_from_slice(&b);
    }
    parse_cifar10(&all, split)
}

/// `data_batch_{1..5}.bin` or `test_batch.bin` from a CIFAR-10 directory.
pub fn load_cifar10_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let names: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".into()],
    };
    let paths: Vec<_> = names.iter().map(|n| dir.join(n)).collect();
    let refs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
    load_cifar10_binary(&refs, split)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Two classes on either side of a random hyperplane through the
    /// mid-grey image, with a guaranteed margin.
    TwoGaussians,
    /// Label is the parity of a 4x4 grid cell picked by the first two pixels;
    /// the remaining pixels are noise.
    Checkerboard,
}

impl SynthKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "two-gaussians" => Ok(SynthKind::TwoGaussians),
            "checkerboard" => Ok(SynthKind::Checkerboard),
            other => Err(Error::InvalidArgument(format!("unknown synthetic set `{other}`"))),
        }
    }
}

/// Deterministic two-class dataset. Sample `i` has label `i % 2`.
pub fn synthesize(kind: SynthKind, n: usize, seed: u64, z: i32, shape: &Shape) -> Result<Dataset> {
    synthesize_split(kind, n, seed, Split::Train, z, shape)
}

/// Stream label for test-split samples.
const SYNTH_TEST_STREAM: u64 = 0x7e57;

/// Like [`synthesize`], but the split picks the sample stream. Both splits
/// share the task drawn from `seed` (the hyperplane for two-gaussians), so a
/// model trained on one generalizes to the other. The train split equals
/// [`synthesize`].
pub fn synthesize_split(kind: SynthKind, n: usize, seed: u64, split: Split, z: i32, shape: &Shape) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument("synthetic sets need n >= 2".into()));
    }
    if z < 1 {
        return Err(Error::InvalidArgument(format!("z = {z}")));
    }
    let d = shape.numel();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zf = z as f64;
    let mut px = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    match kind {
        SynthKind::TwoGaussians => {
            let dir: Vec<f64> = (0..d).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            if split == Split::Test {
                rng = ChaCha8Rng::seed_from_u64(derive(seed, SYNTH_TEST_STREAM));
            }
            let center = zf / 2.0;
            let offset = zf / 4.0;
            let noise = Normal::new(0.0, zf / 8.0).expect("positive sigma");
            let margin = offset * (d as f64).sqrt() / 2.0;
            for i in 0..n {
                let label = i % 2;
                let sign = if label == 1 { 1.0 } else { -1.0 };
                loop {
                    let x: Vec<i32> = dir
                        .iter()
                        .map(|&di| {
                            let v = center + sign * offset * di + noise.sample(&mut rng);
                            v.round().clamp(0.0, zf) as i32
                        })
                        .collect();
                    let proj: f64 =
                        x.iter().zip(&dir).map(|(&v, &di)| di * (v as f64 - center)).sum::<f64>() / (d as f64).sqrt();
                    if sign * proj >= margin {
                        px.extend(x);
                        break;
                    }
                }
                labels.push(label);
            }
        }
        SynthKind::Checkerboard => {
            if d < 2 {
                return Err(Error::Shape("checkerboard needs at least two pixels".into()));
            }
            if split == Split::Test {
                rng = ChaCha8Rng::seed_from_u64(derive(seed, SYNTH_TEST_STREAM));
            }
            let cell = |v: i32| (4 * v as i64 / (z as i64 + 1)) as usize;
            for i in 0..n {
                let label = i % 2;
                let (a, b) = loop {
                    let a = rng.random_range(0..=z);
                    let b = rng.random_range(0..=z);
                    if (cell(a) + cell(b)) % 2 == label {
                        break (a, b);
                    }
                };
                px.push(a);
                px.push(b);
                px.extend((2..d).map(|_| rng.random_range(0..=z)));
                labels.push(label);
            }
        }
    }
    Dataset::new(shape, px, labels, 2, z, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_fixture_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..8).map(|i| (i * 37) as u8).collect();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        fs::write(&ip, encode_idx_images(2, 2, &pixels)).unwrap();
        fs::write(&lp, encode_idx_labels(&[3, 9])).unwrap();
        let ds = load_idx(&ip, &lp, Split::Test).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.sample_shape().dims(), &[1, 2, 2]);
        assert_eq!(ds.image(1), &[148, 185, 222, 3]);
        assert_eq!(ds.labels(), &[3, 9]);
        assert_eq!(ds.z(), 255);
    }

    #[test]
    fn idx_errors() {
        assert!(parse_idx_images(&[]).is_err());
        let mut bad = encode_idx_images(2, 2, &[0; 4]);
        bad[3] = 0x01;
        assert!(parse_idx_images(&bad).is_err());
        let short = encode_idx_images(2, 2, &[0; 8]);
        assert!(parse_idx_images(&short[..short.len() - 1]).is_err());

        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        fs::write(&ip, encode_idx_images(2, 2, &[0; 8])).unwrap();
        fs::write(&lp, encode_idx_labels(&[1, 2, 3])).unwrap();
        assert!(load_idx(&ip, &lp, Split::Train).is_err());
    }

    #[test]
    fn cifar_record() {
        let mut rec = vec![7u8];
        rec.extend((0..3072).map(|i| (i % 251) as u8));
        let ds = parse_cifar10(&rec, Split::Test).unwrap();
        assert_eq!(ds.labels(), &[7]);
        assert_eq!(ds.sample_shape().dims(), &[3, 32, 32]);
        assert_eq!(ds.image(0)[1024], (1024 % 251) as i32);
        assert!(parse_cifar10(&rec[..3000], Split::Test).is_err());
        rec[0] = 10;
        assert!(matches!(parse_cifar10(&rec, Split::Test), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn synthetic_sets_are_deterministic() {
        let s = Shape::of(&[1, 4, 4]);
        for kind in [SynthKind::TwoGaussians, SynthKind::Checkerboard] {
            let a = synthesize(kind, 50, 4, 15, &s).unwrap();
            let b = synthesize(kind, 50, 4, 15, &s).unwrap();
            assert_eq!(a, b);
            assert!(a.images().data().iter().all(|&v| (0..=15).contains(&v)));
            let two = synthesize(kind, 2, 4, 15, &s).unwrap();
            assert_eq!(two.labels(), &[0, 1]);
        }
        assert!(synthesize(SynthKind::TwoGaussians, 1, 0, 15, &s).is_err());
    }

    #[test]
    fn two_gaussians_are_linearly_separable() {
        // perceptron oracle
        let ds = synthesize(SynthKind::TwoGaussians, 200, 1, 15, &Shape::of(&[1, 4, 4])).unwrap();
        let d = ds.sample_len();
        let mut w = vec![0.0f64; d + 1];
        let mut converged = false;
        for _ in 0..1000 {
            let mut mistakes = 0;
            for i in 0..ds.len() {
                let y = if ds.labels()[i] == 1 { 1.0 } else { -1.0 };
                let x = ds.image(i);
                let act: f64 = w[d] + x.iter().zip(&w).map(|(&a, b)| a as f64 * b).sum::<f64>();
                if y * act <= 0.0 {
                    mistakes += 1;
                    for k in 0..d {
                        w[k] += y * x[k] as f64;
                    }
                    w[d] += y;
                }
            }
            if mistakes == 0 {
                converged = true;
                break;
            }
        }
        assert!(converged);

        // the test split shares the hyperplane but not the samples
        let test = synthesize_split(SynthKind::TwoGaussians, 200, 1, Split::Test, 15, &Shape::of(&[1, 4, 4])).unwrap();
        assert_eq!(test.split, Split::Test);
        assert_ne!(test.images(), ds.images());
        let right = (0..test.len())
            .filter(|&i| {
                let act: f64 = w[d] + test.image(i).iter().zip(&w).map(|(&a, b)| a as f64 * b).sum::<f64>();
                (act > 0.0) == (test.labels()[i] == 1)
            })
            .count();
        assert!(right >= 190, "{right}/200");
    }
}
