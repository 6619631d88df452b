// SPDX-License-Identifier: Apache-2.0

//! Bit error tolerance metrics and a brute-force check of the flip bound.
//!
//! The local tolerance of a neuron at one position is the distance of its
//! integer pre-activation `h` to the folded threshold, `|h - s - 1/2|`,
//! divided by the input range `Z` in the first layer. A neuron at level `b`
//! scores the fraction of its positions whose local tolerance reaches `b`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::model::{ForwardTrace, Network, NeuronShift};
use crate::tensor::IntTensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    pub b_levels: Vec<f64>,
    pub z: i32,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            b_levels: vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            z: 255,
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<()> {
        check_levels(&self.b_levels)?;
        if self.z < 1 {
            return Err(Error::InvalidArgument(format!("input scale {}", self.z)));
        }
        Ok(())
    }
}

fn check_levels(b: &[f64]) -> Result<()> {
    if b.is_empty() {
        return Err(Error::InvalidArgument("no tolerance levels".into()));
    }
    if b.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument("tolerance levels must be finite and >= 0".into()));
    }
    if b.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("tolerance levels must be strictly ascending".into()));
    }
    Ok(())
}

/// Anything that can produce a clean eval-mode trace for one sample.
pub trait TraceSource {
    fn trace(&self, x: &IntTensor) -> Result<ForwardTrace>;
    fn shifts(&self) -> Result<Vec<NeuronShift>>;
    fn z(&self) -> i32;
    fn input_len(&self) -> usize;
}

impl TraceSource for Network {
    fn trace(&self, x: &IntTensor) -> Result<ForwardTrace> {
        Ok(self.forward(x, None)?.1)
    }

    fn shifts(&self) -> Result<Vec<NeuronShift>> {
        Network::shifts(self)
    }

    fn z(&self) -> i32 {
        Network::z(self)
    }

    fn input_len(&self) -> usize {
        Network::input_len(self)
    }
}

/// Local tolerance `|h - s - 1/2|` of every hidden layer, laid out like the
/// layer's `h` (`[N, U, V]`). The first layer is divided by `z`.
pub fn local_tolerance(trace: &ForwardTrace, shifts: &[NeuronShift], z: i32) -> Result<Vec<Vec<f64>>> {
    if shifts.len() < trace.layers.len() {
        return Err(Error::Shape(format!(
            "{} shifts for {} hidden layers",
            shifts.len(),
            trace.layers.len()
        )));
    }
    trace
        .layers
        .iter()
        .zip(shifts)
        .map(|(layer, s)| {
            let n = layer.h.shape().dims()[0];
            if s.len() != n {
                return Err(Error::Shape(format!("{} shifts for {n} neurons", s.len())));
            }
            let pos = layer.h.len() / n;
            let scale = if layer.first { z as f64 } else { 1.0 };
            Ok(layer
                .h
                .data()
                .iter()
                .enumerate()
                .map(|(k, &h)| s.distance(k / pos, h as i64) / scale)
                .collect())
        })
        .collect()
}

/// Fraction of positions whose local tolerance is at least `b`.
pub fn neuron_tolerance(local: &[f64], b: f64) -> f64 {
    if local.is_empty() {
        return 0.0;
    }
    local.iter().filter(|&&t| t >= b).count() as f64 / local.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub layer: usize,
    pub neurons: usize,
    pub u: usize,
    pub v: usize,
    pub first: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceReport {
    pub b_levels: Vec<f64>,
    /// Sample count `I`.
    pub samples: usize,
    /// Neuron count `N` over all hidden layers.
    pub neurons: usize,
    pub layers: Vec<LayerInfo>,
    /// `T^b` per level.
    pub t_network: Vec<f64>,
    /// `T^b_i` per level and sample.
    pub t_sample: Vec<Vec<f64>>,
    /// Per level and layer: mean of `T^b_{i,n}` over the layer's neurons and
    /// all samples.
    pub t_layer: Vec<Vec<f64>>,
    /// Per level, layer and neuron: mean of `T^b_{i,n}` over samples.
    pub t_neuron: Vec<Vec<Vec<f64>>>,
    /// Smallest local tolerance seen anywhere.
    pub min_local: f64,
}

impl ToleranceReport {
    pub const CSV_HEADER: &'static str = "b,layer,T_b_layer_mean";

    /// One row per level and layer, followed by a `network` row per level.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for (bi, b) in self.b_levels.iter().enumerate() {
            for (li, info) in self.layers.iter().enumerate() {
                s.push_str(&format!("{b},{},{:.17e}\n", info.layer, self.t_layer[bi][li]));
            }
            s.push_str(&format!("{b},network,{:.17e}\n", self.t_network[bi]));
        }
        s
    }
}

/// Per-sample partial result: `[level][layer][neuron]` neuron tolerances.
struct SampleTol {
    per_neuron: Vec<Vec<Vec<f64>>>,
    min_local: f64,
}

fn sample_tolerance<S: TraceSource + ?Sized>(
    src: &S,
    shifts: &[NeuronShift],
    x: IntTensor,
    b_levels: &[f64],
) -> Result<(SampleTol, Vec<LayerInfo>)> {
    let trace = src.trace(&x)?;
    let local = local_tolerance(&trace, shifts, src.z())?;
    let mut min_local = f64::INFINITY;
    let mut info = Vec::with_capacity(local.len());
    let mut per_neuron = vec![Vec::with_capacity(local.len()); b_levels.len()];
    for (l, (layer, t)) in trace.layers.iter().zip(&local).enumerate() {
        let dims = layer.h.shape().dims();
        let n = dims[0];
        let pos = t.len() / n;
        info.push(LayerInfo {
            layer: l,
            neurons: n,
            u: dims.get(1).copied().unwrap_or(1),
            v: dims.get(2).copied().unwrap_or(1),
            first: layer.first,
        });
        min_local = t.iter().cloned().fold(min_local, f64::min);
        for (bi, &b) in b_levels.iter().enumerate() {
            per_neuron[bi].push((0..n).map(|k| neuron_tolerance(&t[k * pos..(k + 1) * pos], b)).collect());
        }
    }
    Ok((SampleTol { per_neuron, min_local }, info))
}

/// Tolerance report over a dataset, with exactly one clean forward pass per
/// sample. Samples may be traced in parallel; the reduction order is fixed.
pub fn network_tolerance<S: TraceSource + Sync + ?Sized>(src: &S, ds: &Dataset, b_levels: &[f64]) -> Result<ToleranceReport> {
    check_levels(b_levels)?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ds.sample_len() != src.input_len() {
        return Err(Error::Shape(format!("dataset samples {} for input {}", ds.sample_shape(), src.input_len())));
    }
    let shifts = src.shifts()?;
    let run = |i: usize| sample_tolerance(src, &shifts, ds.image_tensor(i), b_levels);
    #[cfg(feature = "parallel")]
    let parts: Vec<_> = {
        use rayon::prelude::*;
        (0..ds.len()).into_par_iter().map(run).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<_> = (0..ds.len()).map(run).collect::<Result<_>>()?;

    let layers = parts[0].1.clone();
    let neurons: usize = layers.iter().map(|l| l.neurons).sum();
    if neurons == 0 {
        return Err(Error::Shape("network has no hidden neurons".into()));
    }
    let nb = b_levels.len();
    let samples = ds.len();
    let mut t_sample = vec![Vec::with_capacity(samples); nb];
    let mut t_neuron: Vec<Vec<Vec<f64>>> =
        vec![layers.iter().map(|l| vec![0.0; l.neurons]).collect(); nb];
    let mut min_local = f64::INFINITY;
    for (part, _) in &parts {
        min_local = min_local.min(part.min_local);
        for bi in 0..nb {
            let mut sum = 0.0;
            for (li, row) in part.per_neuron[bi].iter().enumerate() {
                for (n, &v) in row.iter().enumerate() {
                    sum += v;
                    t_neuron[bi][li][n] += v;
                }
            }
            t_sample[bi].push(sum / neurons as f64);
        }
    }
    let t_network: Vec<f64> = t_sample.iter().map(|s| s.iter().sum::<f64>() / samples as f64).collect();
    let mut t_layer = vec![Vec::with_capacity(layers.len()); nb];
    for bi in 0..nb {
        for (li, l) in layers.iter().enumerate() {
            let row = &mut t_neuron[bi][li];
            row.iter_mut().for_each(|v| *v /= samples as f64);
            t_layer[bi].push(row.iter().sum::<f64>() / l.neurons as f64);
        }
    }
    Ok(ToleranceReport {
        b_levels: b_levels.to_vec(),
        samples,
        neurons,
        layers,
        t_network,
        t_sample,
        t_layer,
        t_neuron,
        min_local,
    })
}

/// A single neuron for flip-bound verification: one row of `±1` weights,
/// one input vector per position, and its folded threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeNeuron {
    pub weights: Vec<i8>,
    /// Input vectors, one per position. `±1` for hidden layers, `0..=z` for
    /// the first layer.
    pub inputs: Vec<Vec<i32>>,
    pub shift: i64,
    pub positive: bool,
    /// First-layer neurons divide the distance by `z`.
    pub first: bool,
    pub z: i32,
}

impl ProbeNeuron {
    /// Hidden-layer neuron with threshold `s`, firing when `h > s`.
    pub fn hidden(weights: Vec<i8>, inputs: Vec<Vec<i32>>, shift: i64) -> Self {
        Self {
            weights,
            inputs,
            shift,
            positive: true,
            first: false,
            z: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.inputs.is_empty() {
            return Err(Error::InvalidArgument("neuron needs weights and at least one position".into()));
        }
        if self.weights.iter().any(|&w| w != 1 && w != -1) {
            return Err(Error::InvalidArgument("weights must be +1 or -1".into()));
        }
        for x in &self.inputs {
            if x.len() != k {
                return Err(Error::Shape(format!("input of length {} for fan-in {k}", x.len())));
            }
            let ok = if self.first {
                x.iter().all(|&v| (0..=self.z).contains(&v))
            } else {
                x.iter().all(|&v| v == 1 || v == -1)
            };
            if !ok {
                return Err(Error::InvalidArgument("input outside the layer's value range".into()));
            }
        }
        if self.first && self.z < 1 {
            return Err(Error::InvalidArgument(format!("input scale {}", self.z)));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        if self.first {
            self.z as f64
        } else {
            1.0
        }
    }

    pub fn h(&self, position: usize) -> i64 {
        self.weights
            .iter()
            .zip(&self.inputs[position])
            .map(|(&w, &x)| w as i64 * x as i64)
            .sum()
    }

    pub fn fires(&self, h: i64) -> bool {
        (h > self.shift) == self.positive
    }

    /// Local tolerance at every position.
    pub fn local_tolerance(&self) -> Vec<f64> {
        (0..self.inputs.len())
            .map(|p| (self.h(p) as f64 - self.shift as f64 - 0.5).abs() / self.scale())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum VerifyMode {
    /// Every flip set up to the budget.
    Exhaustive,
    /// `samples` random flip sets of random size in `1..=budget`.
    Randomized { samples: usize, seed: u64 },
}

/// Largest fan-in accepted for exhaustive enumeration.
pub const EXHAUSTIVE_MAX_FAN_IN: usize = 24;
/// Minimum number of flip sets drawn in randomized mode.
pub const RANDOMIZED_MIN_SAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub flips: Vec<usize>,
    pub position: usize,
    pub h_before: i64,
    pub h_after: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub budget: usize,
    pub min_tolerance: f64,
    pub flip_sets_checked: u64,
    pub counterexample: Option<Counterexample>,
}

impl Verdict {
    pub fn holds(&self) -> bool {
        self.counterexample.is_none()
    }
}

/// Checks that no set of `floor(b / 2)` or fewer weight flips changes the
/// neuron's output at any position. Fails with
/// [`Error::HypothesisViolated`] unless every local tolerance is at least
/// `b`.
pub fn verify_flip_bound(neuron: &ProbeNeuron, b: f64, mode: VerifyMode) -> Result<Verdict> {
    neuron.validate()?;
    if !(b.is_finite() && b >= 0.0) {
        return Err(Error::InvalidArgument(format!("b = {b}")));
    }
    let min = neuron.local_tolerance().into_iter().fold(f64::INFINITY, f64::min);
    if min < b {
        return Err(Error::HypothesisViolated { min_tolerance: min, b });
    }
    probe_flip_budget(neuron, (b / 2.0).floor() as usize, mode)
}

/// Searches for a flip set of at most `budget` weights that changes the
/// output at some position. No hypothesis is checked, so budgets beyond the
/// guaranteed one can be probed.
pub fn probe_flip_budget(neuron: &ProbeNeuron, budget: usize, mode: VerifyMode) -> Result<Verdict> {
    neuron.validate()?;
    let k = neuron.weights.len();
    let budget = budget.min(k);
    let min_tolerance = neuron.local_tolerance().into_iter().fold(f64::INFINITY, f64::min);
    let base: Vec<i64> = (0..neuron.inputs.len()).map(|p| neuron.h(p)).collect();
    // contribution change of flipping weight j at position p
    let delta = |p: usize, j: usize| -2 * neuron.weights[j] as i64 * neuron.inputs[p][j] as i64;
    let check = |set: &[usize]| -> Option<Counterexample> {
        for (p, &h0) in base.iter().enumerate() {
            let h1 = h0 + set.iter().map(|&j| delta(p, j)).sum::<i64>();
            if neuron.fires(h1) != neuron.fires(h0) {
                return Some(Counterexample {
                    flips: set.to_vec(),
                    position: p,
                    h_before: h0,
                    h_after: h1,
                });
            }
        }
        None
    };
    let mut verdict = Verdict {
        budget,
        min_tolerance,
        flip_sets_checked: 0,
        counterexample: None,
    };
    match mode {
        VerifyMode::Exhaustive => {
            if k > EXHAUSTIVE_MAX_FAN_IN {
                return Err(Error::InvalidArgument(format!(
                    "fan-in {k} too large for exhaustive enumeration (max {EXHAUSTIVE_MAX_FAN_IN})"
                )));
            }
            let mut set = Vec::with_capacity(budget);
            verdict.counterexample = enumerate(k, budget, 0, &mut set, &mut verdict.flip_sets_checked, &check);
        }
        VerifyMode::Randomized { samples, seed } => {
            if samples < RANDOMIZED_MIN_SAMPLES {
                return Err(Error::InvalidArgument(format!(
                    "randomized mode needs at least {RANDOMIZED_MIN_SAMPLES} flip sets"
                )));
            }
            if budget == 0 {
                return Ok(verdict);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..samples {
                let size = rng.random_range(1..=budget);
                let mut set = sample(&mut rng, k, size).into_vec();
                set.sort_unstable();
                verdict.flip_sets_checked += 1;
                if let Some(c) = check(&set) {
                    verdict.counterexample = Some(c);
                    break;
                }
            }
        }
    }
    Ok(verdict)
}

/// A random neuron with fan-in up to `max_fan_in`, one to four positions, an
/// integer shift in `[-4, 4]` and either orientation. A quarter are
/// first-layer neurons with inputs in `0..=z` for a random `z <= 5`.
pub fn random_probe_neuron<R: Rng + ?Sized>(rng: &mut R, max_fan_in: usize) -> ProbeNeuron {
    let k = rng.random_range(1..=max_fan_in.max(1));
    let positions = rng.random_range(1..=4);
    let first = rng.random_bool(0.25);
    let z = if first { rng.random_range(1..=5) } else { 1 };
    let sign = |rng: &mut R| if rng.random::<bool>() { 1i8 } else { -1 };
    let inputs = (0..positions)
        .map(|_| {
            (0..k)
                .map(|_| if first { rng.random_range(0..=z) } else { sign(rng) as i32 })
                .collect()
        })
        .collect();
    ProbeNeuron {
        weights: (0..k).map(|_| sign(rng)).collect(),
        inputs,
        shift: rng.random_range(-4..=4),
        positive: rng.random::<bool>(),
        first,
        z,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronFailure {
    pub index: usize,
    pub b: f64,
    pub neuron: ProbeNeuron,
    pub counterexample: Counterexample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipBoundSweep {
    pub neurons: usize,
    pub max_fan_in: usize,
    /// Flips allowed beyond `floor(b / 2)`; non-zero deliberately weakens the
    /// check.
    pub extra_budget: usize,
    pub flip_sets_checked: u64,
    /// Neurons whose budget was non-zero.
    pub nontrivial: usize,
    pub failures: usize,
    /// The first few failures.
    pub examples: Vec<NeuronFailure>,
}

impl FlipBoundSweep {
    pub fn holds(&self) -> bool {
        self.failures == 0
    }
}

/// Verifies the flip bound on `count` random neurons, each with a random
/// `b` no larger than its smallest local tolerance.
pub fn verify_random_neurons(
    count: usize,
    max_fan_in: usize,
    seed: u64,
    mode: VerifyMode,
    extra_budget: usize,
) -> Result<FlipBoundSweep> {
    if max_fan_in == 0 {
        return Err(Error::InvalidArgument("fan-in must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = FlipBoundSweep {
        neurons: count,
        max_fan_in,
        extra_budget,
        flip_sets_checked: 0,
        nontrivial: 0,
        failures: 0,
        examples: Vec::new(),
    };
    for index in 0..count {
        let neuron = random_probe_neuron(&mut rng, max_fan_in);
        let min = neuron.local_tolerance().into_iter().fold(f64::INFINITY, f64::min);
        let b = rng.random_range(0.0..=min);
        let v = if extra_budget == 0 {
            verify_flip_bound(&neuron, b, mode)?
        } else {
            probe_flip_budget(&neuron, (b / 2.0).floor() as usize + extra_budget, mode)?
        };
        out.flip_sets_checked += v.flip_sets_checked;
        out.nontrivial += usize::from(v.budget > 0);
        if let Some(c) = v.counterexample {
            out.failures += 1;
            if out.examples.len() < 10 {
                out.examples.push(NeuronFailure {
                    index,
                    b,
                    neuron,
                    counterexample: c,
                });
            }
        }
    }
    Ok(out)
}

/// The neuron used to show the bound is tight: fan-in 3, all weights and
/// inputs `+1`, threshold 0, so `h = 3` and the local tolerance is 2.5.
pub fn tightness_fixture() -> ProbeNeuron {
    ProbeNeuron::hidden(vec![1; 3], vec![vec![1; 3]], 0)
}

/// Visits every non-empty subset of `start..k` extending `set` up to
/// `budget` elements, in lexicographic order.
fn enumerate(
    k: usize,
    budget: usize,
    start: usize,
    set: &mut Vec<usize>,
    count: &mut u64,
    check: &dyn Fn(&[usize]) -> Option<Counterexample>,
) -> Option<Counterexample> {
    if set.len() == budget {
        return None;
    }
    for j in start..k {
        set.push(j);
        *count += 1;
        if let Some(c) = check(set) {
            return Some(c);
        }
        if let Some(c) = enumerate(k, budget, j + 1, set, count, check) {
            return Some(c);
        }
        set.pop();
    }
    None
}
