// SPDX-License-Identifier: Apache-2.0

//! Independent oracles and property checks shared by the integration tests
//! and the acceptance harness. Every check returns a one-line summary on
//! success and a description of the first violation on failure.

#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use bnn_bet::channel::{apply_flips, inject_persistent, sample_mask, BitErrorChannel, FlipMask, FlipMode};
use bnn_bet::data::{synthesize, Dataset, SynthKind};
use bnn_bet::model::checkpoint::to_bytes;
use bnn_bet::model::{build_preset, Architecture, BatchNorm, ForwardTrace, LayerSpec, Network, NeuronShift};
use bnn_bet::tensor::kernels::ConvGeom;
use bnn_bet::tensor::pool::{maxpool2_backward, maxpool2_planes};
use bnn_bet::tensor::real_ops::{conv2d_backward, conv2d_forward, linear_backward, linear_forward};
use bnn_bet::tensor::{
    binary_conv2d, binary_matmul, int_conv2d_first_layer, int_matmul_first_layer, BinaryTensor, IntTensor, PoolMode,
    Shape,
};
use bnn_bet::tolerance::{
    local_tolerance, network_tolerance, probe_flip_budget, verify_flip_bound, ProbeNeuron, ToleranceReport,
    TraceSource, VerifyMode,
};
use bnn_bet::train::{
    cross_entropy_loss, flip_train_step, flip_train_step_with_masks, plain_train_step, train, Adam, AdamConfig,
    TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub const B_LEVELS: [f64; 6] = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn signs(r: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    (0..n).map(|_| if r.random::<bool>() { 1 } else { -1 }).collect()
}

fn shape(d: &[usize]) -> Shape {
    Shape::new(d.to_vec()).unwrap()
}

// ---------------------------------------------------------------------------
// Flip bound

/// Brute force over every subset (as a bitmask) of at most `budget` weights,
/// recomputing each pre-activation from scratch.
pub fn naive_output_change(w: &[i8], xs: &[Vec<i32>], s: i64, positive: bool, budget: usize) -> Option<u32> {
    let k = w.len();
    let fires = |h: i64| (h > s) == positive;
    let dot = |w: &[i8], x: &[i32]| w.iter().zip(x).map(|(&a, &b)| a as i64 * b as i64).sum::<i64>();
    let base: Vec<bool> = xs.iter().map(|x| fires(dot(w, x))).collect();
    for set in 1u32..(1 << k) {
        if set.count_ones() as usize > budget {
            continue;
        }
        let wf: Vec<i8> = (0..k).map(|j| if set >> j & 1 == 1 { -w[j] } else { w[j] }).collect();
        if xs.iter().zip(&base).any(|(x, &b)| fires(dot(&wf, x)) != b) {
            return Some(set);
        }
    }
    None
}

pub fn random_probe_neuron(r: &mut ChaCha8Rng) -> ProbeNeuron {
    let k = r.random_range(1..=12);
    let positions = r.random_range(1..=4);
    let first = r.random_bool(0.25);
    let z = if first { r.random_range(1..=5) } else { 1 };
    let inputs = (0..positions)
        .map(|_| {
            if first {
                (0..k).map(|_| r.random_range(0..=z)).collect()
            } else {
                signs(r, k).into_iter().map(i32::from).collect()
            }
        })
        .collect();
    ProbeNeuron {
        weights: signs(r, k),
        inputs,
        shift: r.random_range(-4..=4),
        positive: r.random::<bool>(),
        first,
        z,
    }
}

pub fn check_flip_bound(neurons: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let (mut sets, mut nontrivial) = (0u64, 0usize);
    for i in 0..neurons {
        let n = random_probe_neuron(&mut r);
        let min_t = n.local_tolerance().into_iter().fold(f64::INFINITY, f64::min);
        let b = r.random_range(0.0..=min_t);
        let v = verify_flip_bound(&n, b, VerifyMode::Exhaustive).map_err(|e| format!("neuron {i}: {e}"))?;
        let budget = (b / 2.0).floor() as usize;
        if v.budget != budget.min(n.weights.len()) {
            return Err(format!("neuron {i}: budget {} for b = {b}", v.budget));
        }
        if let Some(c) = v.counterexample {
            return Err(format!("neuron {i}: output changed by flips {:?} ({n:?}, b = {b})", c.flips));
        }
        if let Some(set) = naive_output_change(&n.weights, &n.inputs, n.shift, n.positive, budget) {
            return Err(format!("neuron {i}: brute force found flip set {set:#b} ({n:?}, b = {b})"));
        }
        sets += v.flip_sets_checked;
        nontrivial += usize::from(budget > 0);
    }
    let probe = ProbeNeuron::hidden(vec![1; 3], vec![vec![1; 3]], 0);
    if !verify_flip_bound(&probe, 2.0, VerifyMode::Exhaustive).map_err(|e| e.to_string())?.holds() {
        return Err("tightness probe: a single flip changed the output".into());
    }
    let c = probe_flip_budget(&probe, 2, VerifyMode::Exhaustive)
        .map_err(|e| e.to_string())?
        .counterexample
        .ok_or("tightness probe: no 2-flip counterexample")?;
    Ok(format!(
        "{neurons} neurons ({nontrivial} with a non-zero budget), {sets} flip sets, 0 output changes; \
         tightness probe flips {:?}: h {} -> {}",
        c.flips, c.h_before, c.h_after
    ))
}

// ---------------------------------------------------------------------------
// Binary arithmetic

pub fn naive_matvec(w: &[i8], rows: usize, x: &[i32]) -> Vec<i32> {
    let k = x.len();
    (0..rows)
        .map(|n| (0..k).map(|j| w[n * k + j] as i32 * x[j]).sum())
        .collect()
}

/// `w: [F, C, Kh, Kw]`, `x: [C, H, W]`, valid correlation.
pub fn naive_conv(w: &[i8], f: usize, kh: usize, kw: usize, x: &[i32], c: usize, h: usize, wd: usize) -> Vec<i32> {
    let (u, v) = (h - kh + 1, wd - kw + 1);
    let mut y = vec![0; f * u * v];
    for fi in 0..f {
        for a in 0..u {
            for b in 0..v {
                let mut acc = 0;
                for ci in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            acc += w[((fi * c + ci) * kh + i) * kw + j] as i32 * x[(ci * h + a + i) * wd + b + j];
                        }
                    }
                }
                y[(fi * u + a) * v + b] = acc;
            }
        }
    }
    y
}

fn all_sign_vectors(k: usize) -> Vec<i8> {
    (0..1u32 << k)
        .flat_map(|m| (0..k).map(move |j| if m >> j & 1 == 1 { 1 } else { -1 }))
        .collect()
}

pub fn check_binary_arithmetic(random_cases: usize, seed: u64) -> Check {
    let mut exhaustive = 0usize;
    for k in 1..=8 {
        let rows = 1usize << k;
        let wv = all_sign_vectors(k);
        let w = BinaryTensor::from_signs(shape(&[rows, k]), &wv).unwrap();
        for xv in wv.chunks(k) {
            let x = BinaryTensor::from_signs(shape(&[k]), xv).unwrap();
            let got = binary_matmul(&w, &x).map_err(|e| e.to_string())?;
            let want = naive_matvec(&wv, rows, &xv.iter().map(|&v| v as i32).collect::<Vec<_>>());
            if got.data() != want.as_slice() {
                return Err(format!("matmul fan-in {k}, input {xv:?}"));
            }
            exhaustive += rows;
        }
    }
    // every filter against every input for two small geometries
    for (c, h, wd, kh) in [(1usize, 3usize, 3usize, 2usize), (2, 2, 2, 2)] {
        let k = c * kh * kh;
        let f = 1usize << k;
        let wv = all_sign_vectors(k);
        let w = BinaryTensor::from_signs(shape(&[f, c, kh, kh]), &wv).unwrap();
        let n = c * h * wd;
        for xv in all_sign_vectors(n).chunks(n) {
            let x = BinaryTensor::from_signs(shape(&[c, h, wd]), xv).unwrap();
            let got = binary_conv2d(&w, &x).map_err(|e| e.to_string())?;
            let xi: Vec<i32> = xv.iter().map(|&v| v as i32).collect();
            if got.data() != naive_conv(&wv, f, kh, kh, &xi, c, h, wd).as_slice() {
                return Err(format!("conv {c}x{h}x{wd} kernel {kh}, input {xv:?}"));
            }
            exhaustive += f;
        }
    }
    let mut r = rng(seed);
    for case in 0..random_cases {
        let first = case % 4 >= 2;
        let z = if first { r.random_range(1..=255) } else { 1 };
        let input = |r: &mut ChaCha8Rng, n: usize| -> Vec<i32> {
            if first {
                (0..n).map(|_| r.random_range(0..=z)).collect()
            } else {
                signs(r, n).into_iter().map(i32::from).collect()
            }
        };
        if case % 2 == 0 {
            let k = r.random_range(9..=700);
            let rows = r.random_range(1..=8);
            let wv = signs(&mut r, rows * k);
            let xv = input(&mut r, k);
            let w = BinaryTensor::from_signs(shape(&[rows, k]), &wv).unwrap();
            let got = if first {
                int_matmul_first_layer(&w, &IntTensor::new(shape(&[k]), xv.clone()).unwrap(), z)
            } else {
                let xs: Vec<i8> = xv.iter().map(|&v| v as i8).collect();
                binary_matmul(&w, &BinaryTensor::from_signs(shape(&[k]), &xs).unwrap())
            }
            .map_err(|e| e.to_string())?;
            if got.data() != naive_matvec(&wv, rows, &xv).as_slice() {
                return Err(format!("random matmul case {case}: fan-in {k}, first layer {first}"));
            }
        } else {
            let c = r.random_range(1..=4);
            let kh = r.random_range(1..=3);
            let kw = r.random_range(1..=3);
            let h = r.random_range(kh.max(3)..=9);
            let wd = r.random_range(kw.max(3)..=9);
            let f = r.random_range(1..=4);
            let wv = signs(&mut r, f * c * kh * kw);
            let xv = input(&mut r, c * h * wd);
            let w = BinaryTensor::from_signs(shape(&[f, c, kh, kw]), &wv).unwrap();
            let got = if first {
                int_conv2d_first_layer(&w, &IntTensor::new(shape(&[c, h, wd]), xv.clone()).unwrap(), z)
            } else {
                let xs: Vec<i8> = xv.iter().map(|&v| v as i8).collect();
                binary_conv2d(&w, &BinaryTensor::from_signs(shape(&[c, h, wd]), &xs).unwrap())
            }
            .map_err(|e| e.to_string())?;
            if got.data() != naive_conv(&wv, f, kh, kw, &xv, c, h, wd).as_slice() {
                return Err(format!("random conv case {case}: {f}x{c}x{kh}x{kw} over {c}x{h}x{wd}"));
            }
        }
    }
    Ok(format!(
        "{exhaustive} exhaustive dot products (fan-in <= 8) and {random_cases} random kernels match the naive oracle"
    ))
}

// ---------------------------------------------------------------------------
// Batch norm folding

pub fn random_batch_norm(r: &mut ChaCha8Rng, integer_threshold: bool) -> BatchNorm {
    let mut bn = BatchNorm::new(1);
    let mag = r.random_range(0.01..3.0);
    bn.gamma[0] = if r.random::<bool>() { mag } else { -mag };
    if integer_threshold {
        bn.beta[0] = 0.0;
        bn.running_mean[0] = r.random_range(-100i32..=100) as f64;
    } else {
        bn.beta[0] = r.random_range(-3.0..3.0);
        bn.running_mean[0] = r.random_range(-100.0..100.0);
    }
    bn.running_var[0] = r.random_range(0.0..200.0);
    bn
}

pub fn check_fold(draws: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut compared = 0usize;
    for d in 0..draws {
        let bn = random_batch_norm(&mut r, d % 4 == 0);
        let s = bn.fold().map_err(|e| e.to_string())?;
        for h in -128i64..=128 {
            let real = bn.apply_eval(0, h as f64) > 0.0;
            if real != s.fires(0, h) {
                return Err(format!("draw {d}: h = {h}, {bn:?} folds to {s:?}"));
            }
            compared += 1;
        }
    }
    Ok(format!("{draws} parameter draws, {compared} comparisons, 0 mismatches"))
}

// ---------------------------------------------------------------------------
// Flip training contracts

pub fn tiny_batch(arch: &Architecture, n: usize, seed: u64) -> Dataset {
    synthesize(SynthKind::TwoGaussians, n, seed, 15, &arch.input).unwrap()
}

fn masks_for(net: &Network, p: f64, seed: u64) -> Vec<FlipMask> {
    let ch = BitErrorChannel::new(p, seed, 1).unwrap();
    net.blocks()
        .iter()
        .enumerate()
        .map(|(l, b)| sample_mask(&ch.substream(l as u64), b.binary().shape().clone()))
        .collect()
}

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1e-12))
}

pub fn check_flip_training(seed: u64) -> Check {
    // p = 0 in either mode is the plain step, bitwise, for 10 steps
    let arch = build_preset("tiny-cnn", 1.0).unwrap();
    let ds = tiny_batch(&arch, 64, seed);
    let mut nets: Vec<Network> = (0..3).map(|_| Network::new(arch.clone(), 15, seed).unwrap()).collect();
    let mut opts: Vec<Adam> = nets.iter().map(|n| Adam::new(n, AdamConfig::default())).collect();
    let mut losses = vec![Vec::new(); 3];
    for step in 0..10usize {
        let idx: Vec<usize> = (0..16).map(|i| (step * 16 + i) % ds.len()).collect();
        let x = ds.gather(&idx);
        let labels: Vec<usize> = idx.iter().map(|&i| ds.labels()[i]).collect();
        for (k, (net, opt)) in nets.iter_mut().zip(&mut opts).enumerate() {
            let ch = BitErrorChannel::new(0.0, seed, step as u64).unwrap();
            let out = match k {
                0 => plain_train_step(net, &x, &labels, None),
                1 => flip_train_step(net, &x, &labels, &ch, FlipMode::Native),
                _ => flip_train_step(net, &x, &labels, &ch, FlipMode::StraightThrough),
            }
            .map_err(|e| e.to_string())?;
            losses[k].push(out.loss.total().to_bits());
            opt.step(net, &out.grads, 1e-2).map_err(|e| e.to_string())?;
        }
    }
    let bytes: Vec<Vec<u8>> = nets.iter().map(|n| to_bytes(n).unwrap()).collect();
    if losses[1] != losses[0] || losses[2] != losses[0] || bytes[1] != bytes[0] || bytes[2] != bytes[0] {
        return Err("p = 0 flip training diverged from plain training".into());
    }

    // gradients against a network whose weights are hard-set to the
    // corrupted values
    let mut flipped_total = 0usize;
    for (preset, tol) in [("tiny-fcnn", 0.0), ("tiny-cnn", 1e-6)] {
        let arch = build_preset(preset, 1.0).unwrap();
        let ds = tiny_batch(&arch, 12, seed ^ 7);
        let x = ds.images().data().to_vec();
        let labels = ds.labels().to_vec();
        let base = Network::new(arch, 15, seed ^ 3).unwrap();
        let masks = masks_for(&base, 0.3, seed);
        let mut reference = base.clone();
        for (l, m) in masks.iter().enumerate() {
            let w = apply_flips(base.blocks()[l].binary(), m).unwrap();
            reference.set_binary(l, w).map_err(|e| e.to_string())?;
        }
        let want = plain_train_step(&mut reference, &x, &labels, None).map_err(|e| e.to_string())?;
        let mut ste_net = base.clone();
        let ste = flip_train_step_with_masks(&mut ste_net, &x, &labels, masks.clone(), FlipMode::StraightThrough)
            .map_err(|e| e.to_string())?;
        let mut native_net = base.clone();
        let native = flip_train_step_with_masks(&mut native_net, &x, &labels, masks.clone(), FlipMode::Native)
            .map_err(|e| e.to_string())?;
        if ste.loss.cross_entropy.to_bits() != want.loss.cross_entropy.to_bits() {
            return Err(format!("{preset}: corrupted forward loss differs from the reference"));
        }
        for (l, m) in masks.iter().enumerate() {
            let (r, s, n) = (&want.grads.blocks[l], &ste.grads.blocks[l], &native.grads.blocks[l]);
            let exact = tol == 0.0;
            let same = |a: &[f64], b: &[f64]| if exact { a == b } else { rel_close(a, b, tol) };
            if !same(&s.weights, &r.weights) || !same(&s.gamma, &r.gamma) || !same(&s.beta, &r.beta) {
                return Err(format!("{preset} block {l}: straight-through gradient differs from the reference"));
            }
            let masked: Vec<f64> = r.weights.iter().enumerate().map(|(i, g)| g * m.sign(i)).collect();
            if !same(&n.weights, &masked) || !same(&n.gamma, &r.gamma) || !same(&n.beta, &r.beta) {
                return Err(format!("{preset} block {l}: native gradient is not the masked reference"));
            }
            for i in 0..m.len() {
                let (a, b) = (s.weights[i], n.weights[i]);
                let ok = if m.is_flip(i) { a == -b } else { a == b };
                if !ok {
                    return Err(format!("{preset} block {l}: modes disagree off the flip pattern at {i}"));
                }
            }
            flipped_total += m.flips();
        }
    }
    Ok(format!(
        "p = 0 bitwise equal over 10 steps in both modes; straight-through and native gradients match the \
         corrupted-weight reference ({flipped_total} flipped weights)"
    ))
}

// ---------------------------------------------------------------------------
// Finite differences

const FD_EPS: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn numeric_grad(x: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = v[i];
            v[i] = orig + FD_EPS;
            let up = f(&v);
            v[i] = orig - FD_EPS;
            let down = f(&v);
            v[i] = orig;
            (up - down) / (2.0 * FD_EPS)
        })
        .collect()
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn uniform(r: &mut ChaCha8Rng, n: usize, lim: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-lim..lim)).collect()
}

pub struct FdReport {
    pub worst: Vec<(&'static str, f64)>,
}

/// Batch norm (including a direct gradient on the normalized values),
/// softmax cross-entropy, linear, convolution and max-pool backward passes
/// against central differences.
pub fn finite_differences(configs: usize, seed: u64) -> FdReport {
    let mut r = rng(seed);
    let mut worst = vec![("batchnorm", 0.0f64), ("softmax-ce", 0.0), ("linear", 0.0), ("conv", 0.0), ("maxpool", 0.0)];
    let mut note = |k: usize, e: f64| worst[k].1 = worst[k].1.max(e);
    for _ in 0..configs {
        // batch norm: L = <r, y> + <q, xhat>. Two values per channel
        // normalize to exactly +-1 whatever h is, leaving a gradient of
        // order eps that central differences cannot resolve; use three or
        // more.
        let (ch, batch, pos) = (r.random_range(1..=3), r.random_range(3..=5), r.random_range(1..=4));
        let n = ch * batch * pos;
        let h = uniform(&mut r, n, 3.0);
        let (ry, rq) = (uniform(&mut r, n, 1.0), uniform(&mut r, n, 1.0));
        let mut bn = BatchNorm::new(ch);
        bn.gamma = (0..ch).map(|_| r.random_range(0.3..2.0) * if r.random::<bool>() { 1.0 } else { -1.0 }).collect();
        bn.beta = uniform(&mut r, ch, 1.0);
        let loss = |bn: &BatchNorm, h: &[f64]| {
            let (y, cache) = bn.clone().forward_train(h, batch, pos);
            dotp(&ry, &y) + dotp(&rq, &cache.xhat)
        };
        let (_, cache) = bn.clone().forward_train(&h, batch, pos);
        let (dh, dg, db) = bn.backward_train(&ry, &cache, Some(&rq), batch, pos);
        let nh = numeric_grad(&h, &mut |v| loss(&bn, v));
        let ng = numeric_grad(&bn.gamma, &mut |v| {
            let mut b = bn.clone();
            b.gamma = v.to_vec();
            loss(&b, &h)
        });
        let nb = numeric_grad(&bn.beta, &mut |v| {
            let mut b = bn.clone();
            b.beta = v.to_vec();
            loss(&b, &h)
        });
        note(0, rel_err(&dh, &nh).max(rel_err(&dg, &ng)).max(rel_err(&db, &nb)));

        // softmax cross-entropy
        let (batch, classes) = (r.random_range(1..=4), r.random_range(2..=6));
        let logits = uniform(&mut r, batch * classes, 3.0);
        let labels: Vec<usize> = (0..batch).map(|_| r.random_range(0..classes)).collect();
        let (_, g) = cross_entropy_loss(&logits, &labels, classes).unwrap();
        let ng = numeric_grad(&logits, &mut |v| cross_entropy_loss(v, &labels, classes).unwrap().0);
        note(1, rel_err(&g, &ng));

        // linear
        let (batch, fan_in, out) = (r.random_range(1..=4), r.random_range(1..=6), r.random_range(1..=5));
        let x = uniform(&mut r, batch * fan_in, 1.0);
        let w = uniform(&mut r, out * fan_in, 1.0);
        let ry = uniform(&mut r, batch * out, 1.0);
        let (dx, dw) = linear_backward(&ry, &x, &w, batch, fan_in, out);
        let nx = numeric_grad(&x, &mut |v| dotp(&ry, &linear_forward(v, &w, batch, fan_in, out)));
        let nw = numeric_grad(&w, &mut |v| dotp(&ry, &linear_forward(&x, v, batch, fan_in, out)));
        note(2, rel_err(&dx, &nx).max(rel_err(&dw, &nw)));

        // convolution
        let c = r.random_range(1..=2);
        let k = r.random_range(1..=3);
        let (hh, ww) = (r.random_range(k.max(2)..=5), r.random_range(k.max(2)..=5));
        let (f, batch) = (r.random_range(1..=3), r.random_range(1..=2));
        let g = ConvGeom::new(c, hh, ww, k, k).unwrap();
        let x = uniform(&mut r, batch * c * hh * ww, 1.0);
        let w = uniform(&mut r, f * c * k * k, 1.0);
        let ry = uniform(&mut r, batch * f * g.positions(), 1.0);
        let (dx, dw) = conv2d_backward(&ry, &x, &w, batch, &g, f, true);
        let nx = numeric_grad(&x, &mut |v| dotp(&ry, &conv2d_forward(v, &w, batch, &g, f)));
        let nw = numeric_grad(&w, &mut |v| dotp(&ry, &conv2d_forward(&x, v, batch, &g, f)));
        note(3, rel_err(&dx, &nx).max(rel_err(&dw, &nw)));

        // max-pool with well separated values so the argmax is stable
        let (planes, ph, pw) = (r.random_range(1..=3), r.random_range(1..=5), r.random_range(1..=5));
        let len = planes * ph * pw;
        let mut order: Vec<usize> = (0..len).collect();
        for i in (1..len).rev() {
            order.swap(i, r.random_range(0..=i));
        }
        let x: Vec<f64> = order.iter().map(|&o| o as f64 * 0.01).collect();
        let fwd = |v: &[f64]| maxpool2_planes(v, planes, ph, pw, PoolMode::Ceil).unwrap();
        let (pooled, idx) = fwd(&x);
        let ry = uniform(&mut r, pooled.len(), 1.0);
        let dx = maxpool2_backward(&ry, &idx, len);
        let nx = numeric_grad(&x, &mut |v| dotp(&ry, &fwd(v).0));
        note(4, rel_err(&dx, &nx));
    }
    FdReport { worst }
}

pub fn check_finite_differences(configs: usize, seed: u64) -> Check {
    let rep = finite_differences(configs, seed);
    let text: Vec<String> = rep.worst.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect();
    if rep.worst.iter().all(|(_, e)| *e < FD_TOL) {
        Ok(format!("{configs} configurations each, worst relative error: {}", text.join(", ")))
    } else {
        Err(format!("relative error above {FD_TOL:e}: {}", text.join(", ")))
    }
}

// ---------------------------------------------------------------------------
// Tolerance metric

/// Counts trace requests.
pub struct Counting<'a> {
    pub net: &'a Network,
    pub calls: AtomicUsize,
}

impl<'a> Counting<'a> {
    pub fn new(net: &'a Network) -> Self {
        Self {
            net,
            calls: AtomicUsize::new(0),
        }
    }
}

impl TraceSource for Counting<'_> {
    fn trace(&self, x: &IntTensor) -> bnn_bet::Result<ForwardTrace> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.net.trace(x)
    }

    fn shifts(&self) -> bnn_bet::Result<Vec<NeuronShift>> {
        self.net.shifts()
    }

    fn z(&self) -> i32 {
        self.net.z()
    }

    fn input_len(&self) -> usize {
        self.net.input_len()
    }
}

pub fn odd_cnn() -> Architecture {
    Architecture {
        input: shape(&[2, 9, 9]),
        classes: 3,
        layers: vec![
            LayerSpec::Conv { filters: 3, kernel: 3 },
            LayerSpec::MaxPool,
            LayerSpec::Conv { filters: 4, kernel: 2 },
            LayerSpec::Fc { units: 6 },
            LayerSpec::Fc { units: 3 },
        ],
        pool_mode: PoolMode::Ceil,
    }
}

/// Random binary weights and batch norm parameters spread around the
/// typical pre-activation range of each layer.
pub fn random_network(arch: Architecture, z: i32, seed: u64) -> Network {
    let mut net = Network::new(arch, z, seed).unwrap();
    let mut r = rng(seed ^ 0x9e37);
    for l in 0..net.blocks().len() {
        let (units, fan_in) = (net.blocks()[l].units(), net.blocks()[l].fan_in() as f64);
        let scale = if l == 0 { z as f64 / 2.0 } else { 1.0 };
        let bn = net.batch_norm_mut(l).unwrap();
        for c in 0..units {
            let g = r.random_range(0.2..2.0);
            bn.gamma[c] = if r.random::<bool>() { g } else { -g };
            bn.beta[c] = r.random_range(-1.0..1.0);
            bn.running_mean[c] = r.random_range(-0.5..0.5) * fan_in.sqrt() * scale;
            bn.running_var[c] = r.random_range(0.5..2.0) * fan_in * scale * scale;
        }
    }
    net
}

/// Nested means recomputed from local tolerances, as an oracle for the
/// report's aggregation.
fn oracle_network_tb(net: &Network, ds: &Dataset, b: f64) -> f64 {
    let shifts = net.shifts().unwrap();
    let mut total = 0.0;
    for i in 0..ds.len() {
        let trace = net.forward(&ds.image_tensor(i), None).unwrap().1;
        let local = local_tolerance(&trace, &shifts, net.z()).unwrap();
        let (mut sum, mut count) = (0.0, 0usize);
        for (layer, t) in trace.layers.iter().zip(&local) {
            let n = layer.h.shape().dims()[0];
            let pos = t.len() / n;
            for k in 0..n {
                let hits = t[k * pos..(k + 1) * pos].iter().filter(|&&v| v >= b).count();
                sum += hits as f64 / pos as f64;
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    total / ds.len() as f64
}

pub fn check_report(net: &Network, ds: &Dataset, label: &str) -> Result<ToleranceReport, String> {
    let counting = Counting::new(net);
    let rep = network_tolerance(&counting, ds, &B_LEVELS).map_err(|e| format!("{label}: {e}"))?;
    let calls = counting.calls.load(Ordering::SeqCst);
    if calls != ds.len() {
        return Err(format!("{label}: {calls} forward passes for {} samples", ds.len()));
    }
    let in_range = |v: f64| (0.0..=1.0).contains(&v);
    let mono = |xs: &[f64]| xs.windows(2).all(|w| w[0] >= w[1]);
    let levels = B_LEVELS.len();
    if !rep.t_network.iter().all(|&v| in_range(v)) || !mono(&rep.t_network) {
        return Err(format!("{label}: network values {:?}", rep.t_network));
    }
    for i in 0..rep.samples {
        let col: Vec<f64> = (0..levels).map(|b| rep.t_sample[b][i]).collect();
        if !col.iter().all(|&v| in_range(v)) || !mono(&col) {
            return Err(format!("{label}: sample {i} values {col:?}"));
        }
    }
    for (li, layer) in rep.layers.iter().enumerate() {
        let col: Vec<f64> = (0..levels).map(|b| rep.t_layer[b][li]).collect();
        if !col.iter().all(|&v| in_range(v)) || !mono(&col) {
            return Err(format!("{label}: layer {li} values {col:?}"));
        }
        for n in 0..layer.neurons {
            let col: Vec<f64> = (0..levels).map(|b| rep.t_neuron[b][li][n]).collect();
            if !col.iter().all(|&v| in_range(v)) || !mono(&col) {
                return Err(format!("{label}: neuron {li}/{n} values {col:?}"));
            }
        }
    }
    // parity of hidden-layer local tolerances
    let shifts = net.shifts().map_err(|e| e.to_string())?;
    for i in 0..ds.len().min(8) {
        let trace = net.trace(&ds.image_tensor(i)).map_err(|e| e.to_string())?;
        let local = local_tolerance(&trace, &shifts, net.z()).map_err(|e| e.to_string())?;
        for (layer, t) in trace.layers.iter().zip(&local) {
            if layer.first {
                continue;
            }
            if let Some(v) = t.iter().find(|&&v| v < 0.5 || (2.0 * v) % 2.0 != 1.0) {
                return Err(format!("{label}: hidden local tolerance {v} is not in {{0.5, 1.5, ...}}"));
            }
        }
    }
    for (bi, &b) in B_LEVELS.iter().enumerate() {
        let want = oracle_network_tb(net, ds, b);
        if (want - rep.t_network[bi]).abs() > 1e-12 {
            return Err(format!("{label}: T^{b} = {} but the oracle gives {want}", rep.t_network[bi]));
        }
    }
    Ok(rep)
}

pub fn trained_tiny(preset: &str, seed: u64) -> (Network, Dataset) {
    let arch = build_preset(preset, 1.0).unwrap();
    let ds = tiny_batch(&arch, 200, seed);
    let mut net = Network::new(arch, 15, seed).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 32,
        seed,
        ..Default::default()
    };
    train(&mut net, &ds, None, &cfg).unwrap();
    (net, ds)
}

pub fn check_tolerance_metric(random_networks: usize, seed: u64) -> Check {
    let archs = [
        build_preset("tiny-fcnn", 1.0).unwrap(),
        build_preset("tiny-cnn", 1.0).unwrap(),
        odd_cnn(),
    ];
    for i in 0..random_networks {
        let arch = archs[i % archs.len()].clone();
        let ds = tiny_batch(&arch, 24, seed + i as u64);
        let net = random_network(arch, 15, seed + 100 + i as u64);
        check_report(&net, &ds, &format!("random network {i}"))?;
    }
    for preset in ["tiny-fcnn", "tiny-cnn"] {
        let (net, ds) = trained_tiny(preset, seed);
        check_report(&net, &ds, &format!("trained {preset}"))?;
    }
    Ok(format!(
        "{random_networks} random and 2 trained networks: values in [0, 1], non-increasing over b, \
         hidden local tolerances half-integral, aggregation matches the oracle, one forward pass per sample"
    ))
}

// ---------------------------------------------------------------------------
// Channel

pub fn check_channel(bits: usize, seed: u64) -> Check {
    let mut parts = Vec::new();
    for (k, p) in [0.01, 0.05, 0.1, 0.2].into_iter().enumerate() {
        let ch = BitErrorChannel::new(p, seed, k as u64).unwrap();
        let flips = sample_mask(&ch, shape(&[bits])).flips() as f64;
        let mean = bits as f64 * p;
        let sigma = (mean * (1.0 - p)).sqrt();
        let z = (flips - mean) / sigma;
        if z.abs() > 5.0 {
            return Err(format!("p = {p}: {flips} flips, {z:.2} sigma from {mean}"));
        }
        parts.push(format!("p={p}: {z:+.2}σ"));
    }
    let mut r = rng(seed);
    let s = shape(&[7, 301]);
    let wv = signs(&mut r, s.numel());
    let w = BinaryTensor::from_signs(s.clone(), &wv).unwrap();
    let m = sample_mask(&BitErrorChannel::new(0.3, seed, 9).unwrap(), s.clone());
    let twice = apply_flips(&apply_flips(&w, &m).unwrap(), &m).unwrap();
    if twice != w {
        return Err("applying a mask twice is not the identity".into());
    }
    let none = sample_mask(&BitErrorChannel::new(0.0, seed, 3).unwrap(), s.clone());
    let all = sample_mask(&BitErrorChannel::new(1.0, seed, 3).unwrap(), s.clone());
    if none.flips() != 0 || apply_flips(&w, &none).unwrap() != w {
        return Err("rate 0 changed weights".into());
    }
    let neg = apply_flips(&w, &all).unwrap();
    if all.flips() != s.numel() || (0..w.len()).any(|i| neg.get(i) != -w.get(i)) {
        return Err("rate 1 did not negate every weight".into());
    }
    let net = random_network(build_preset("tiny-cnn", 1.0).unwrap(), 15, seed);
    let clean = inject_persistent(&net, 0.0, seed).unwrap();
    let full = inject_persistent(&net, 1.0, seed).unwrap();
    for (l, b) in net.blocks().iter().enumerate() {
        let f = full.blocks()[l].binary();
        if clean.blocks()[l].binary() != b.binary() || (0..f.len()).any(|i| f.get(i) != -b.binary().get(i)) {
            return Err(format!("persistent injection at rate 0/1 wrong in block {l}"));
        }
    }
    Ok(format!(
        "{bits}-bit masks within 5σ ({}); mask application is an involution; rates 0 and 1 exact",
        parts.join(", ")
    ))
}
