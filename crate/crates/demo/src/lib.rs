// SPDX-License-Identifier: Apache-2.0

//! WebAssembly bindings for the static page in `www/`.
//!
//! Every export returns a JSON string; errors come back as JS exceptions.

use bnn_bet::channel::FlipMode;
use bnn_bet::data::{synthesize_split, Split, SynthKind};
use bnn_bet::eval::{accuracy, summarize, sweep};
use bnn_bet::model::{build_preset, Network};
use bnn_bet::rng::derive;
use bnn_bet::tolerance::{
    network_tolerance, probe_flip_budget, verify_random_neurons, ProbeNeuron, FlipBoundSweep, Verdict, VerifyMode,
};
use bnn_bet::train::{train, TrainConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const Z: i32 = 15;
const B_LEVELS: [f64; 6] = [0.5, 1.5, 2.5, 3.5, 4.5, 5.5];

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub rate_pct: f64,
    pub mean: f64,
    pub half_range: f64,
}

#[derive(Debug, Serialize)]
pub struct TrainedModel {
    pub flip_p: f64,
    pub clean_acc: f64,
    pub curve: Vec<CurvePoint>,
    pub b_levels: Vec<f64>,
    pub t_b: Vec<f64>,
}

/// Trains a double-width tiny-cnn on two separable classes, then measures accuracy under
/// persistent weight flips at 0..=`max_rate` percent and the tolerance curve.
pub fn train_model(flip_p: f64, epochs: usize, seed: u64, max_rate: f64) -> bnn_bet::Result<TrainedModel> {
    let arch = build_preset("tiny-cnn", 2.0)?;
    let train_set = synthesize_split(SynthKind::TwoGaussians, 400, seed, Split::Train, Z, &arch.input)?;
    let test_set = synthesize_split(SynthKind::TwoGaussians, 200, seed, Split::Test, Z, &arch.input)?;
    let mut net = Network::new(arch, Z, seed)?;
    let cfg = TrainConfig {
        epochs,
        batch_size: 8,
        lr: 1e-2,
        flip_mode: if flip_p > 0.0 { FlipMode::StraightThrough } else { FlipMode::None },
        flip_p,
        seed,
        ..Default::default()
    };
    train(&mut net, &train_set, None, &cfg)?;
    let rates: Vec<f64> = (0..=10).map(|i| max_rate * i as f64 / 10.0).collect();
    let rows = sweep(&net, &test_set, &rates, 5, derive(seed, 2))?;
    let report = network_tolerance(&net, &test_set, &B_LEVELS)?;
    Ok(TrainedModel {
        flip_p,
        clean_acc: accuracy(&net, &test_set)?,
        curve: summarize(&rows)
            .into_iter()
            .map(|s| CurvePoint {
                rate_pct: s.rate_pct,
                mean: s.mean,
                half_range: s.half_range,
            })
            .collect(),
        b_levels: B_LEVELS.to_vec(),
        t_b: report.t_network,
    })
}

#[derive(Debug, Serialize)]
pub struct Explored {
    pub h: i64,
    pub local_tolerance: f64,
    pub fires: bool,
    /// Flips the bound guarantees are harmless.
    pub safe_flips: usize,
    pub verdict: Verdict,
}

fn parse_signs(s: &str) -> bnn_bet::Result<Vec<i8>> {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            '+' | '1' => Ok(1),
            '-' | '0' => Ok(-1),
            other => Err(bnn_bet::Error::InvalidArgument(format!("`{other}` is not + or -"))),
        })
        .collect()
}

/// One hidden neuron given as `+`/`-` strings. Checks every set of
/// `safe + extra` flipped weights for a change of output.
pub fn explore_neuron(weights: &str, inputs: &str, shift: i64, extra: usize) -> bnn_bet::Result<Explored> {
    let w = parse_signs(weights)?;
    let x: Vec<i32> = parse_signs(inputs)?.into_iter().map(i32::from).collect();
    if w.len() != x.len() || w.is_empty() || w.len() > 16 {
        return Err(bnn_bet::Error::InvalidArgument(
            "weights and inputs need the same length, 1 to 16".into(),
        ));
    }
    let neuron = ProbeNeuron::hidden(w, vec![x], shift);
    let t = neuron.local_tolerance()[0];
    let safe = (t / 2.0).floor() as usize;
    Ok(Explored {
        h: neuron.h(0),
        local_tolerance: t,
        fires: neuron.fires(neuron.h(0)),
        safe_flips: safe,
        verdict: probe_flip_budget(&neuron, safe + extra, VerifyMode::Exhaustive)?,
    })
}

/// The flip bound on `count` random neurons.
pub fn check_random(count: usize, max_fan_in: usize, seed: u64) -> bnn_bet::Result<FlipBoundSweep> {
    verify_random_neurons(count, max_fan_in, seed, VerifyMode::Exhaustive, 0)
}

fn to_js<T: Serialize>(r: bnn_bet::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = trainModel)]
pub fn train_model_js(flip_p: f64, epochs: u32, seed: u32, max_rate: f64) -> Result<String, JsError> {
    to_js(train_model(flip_p, epochs as usize, seed as u64, max_rate))
}

#[wasm_bindgen(js_name = exploreNeuron)]
pub fn explore_neuron_js(weights: &str, inputs: &str, shift: i32, extra: u32) -> Result<String, JsError> {
    to_js(explore_neuron(weights, inputs, shift as i64, extra as usize))
}

#[wasm_bindgen(js_name = checkRandom)]
pub fn check_random_js(count: u32, max_fan_in: u32, seed: u32) -> Result<String, JsError> {
    to_js(check_random(count as usize, max_fan_in as usize, seed as u64))
}
