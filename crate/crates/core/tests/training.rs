// SPDX-License-Identifier: Apache-2.0

mod support;

use bnn_bet::channel::FlipMode;
use bnn_bet::data::{synthesize, SynthKind};
use bnn_bet::eval::accuracy;
use bnn_bet::model::checkpoint::{load, save, to_bytes};
use bnn_bet::model::{build_preset, Architecture, LayerSpec, Network};
use bnn_bet::tensor::{PoolMode, Shape};
use bnn_bet::train::{
    direct_reg_penalty, hinge, log_csv, plain_train_step, train, DirectReg, EpochLog, TrainConfig,
};

fn two_gaussians(n: usize, seed: u64) -> bnn_bet::data::Dataset {
    let arch = build_preset("tiny-fcnn", 1.0).unwrap();
    synthesize(SynthKind::TwoGaussians, n, seed, 15, &arch.input).unwrap()
}

#[test]
fn tiny_fcnn_fits_separable_data() {
    let ds = two_gaussians(200, 3);
    let mut net = Network::new(build_preset("tiny-fcnn", 1.0).unwrap(), 15, 3).unwrap();
    // the identity activation estimator learns slowly from few steps; small
    // batches give it enough updates within 30 epochs
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 8,
        seed: 3,
        ..Default::default()
    };
    let out = train(&mut net, &ds, Some(&ds), &cfg).unwrap();
    let acc = accuracy(&net, &ds).unwrap();
    assert!(acc >= 95.0, "train accuracy {acc}");
    assert_eq!(out.log.len(), 30);
    assert_eq!(out.log.last().unwrap().eval_acc, acc);
    let best = out.best_eval_acc.unwrap();
    assert!(best >= acc);
    assert_eq!(accuracy(out.best.as_ref().unwrap(), &ds).unwrap(), best);
}

#[test]
fn zero_epochs_leave_the_initialization() {
    let ds = two_gaussians(20, 1);
    let init = Network::new(build_preset("tiny-fcnn", 1.0).unwrap(), 15, 9).unwrap();
    let mut net = init.clone();
    let cfg = TrainConfig {
        epochs: 0,
        ..Default::default()
    };
    let out = train(&mut net, &ds, Some(&ds), &cfg).unwrap();
    assert!(out.log.is_empty() && out.best.is_none());
    assert_eq!(to_bytes(&net).unwrap(), to_bytes(&init).unwrap());
}

#[test]
fn training_is_deterministic() {
    let ds = two_gaussians(100, 4);
    let arch = build_preset("tiny-cnn", 1.0).unwrap();
    let ds = synthesize(SynthKind::Checkerboard, ds.len(), 4, 15, &arch.input).unwrap();
    for mode in [FlipMode::None, FlipMode::Native, FlipMode::StraightThrough] {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            flip_mode: mode,
            flip_p: if mode == FlipMode::None { 0.0 } else { 0.1 },
            seed: 21,
            ..Default::default()
        };
        let run = || {
            let mut net = Network::new(arch.clone(), 15, 21).unwrap();
            let out = train(&mut net, &ds, Some(&ds), &cfg).unwrap();
            (log_csv(&out.log), to_bytes(&net).unwrap())
        };
        assert_eq!(run(), run(), "{mode:?}");
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let ds = two_gaussians(64, 5);
    let arch = build_preset("tiny-fcnn", 1.0).unwrap();
    let run = |seed| {
        let mut net = Network::new(arch.clone(), 15, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            seed,
            ..Default::default()
        };
        train(&mut net, &ds, None, &cfg).unwrap();
        to_bytes(&net).unwrap()
    };
    assert_ne!(run(1), run(2));
}

#[test]
fn log_csv_has_fixed_columns() {
    let ds = two_gaussians(32, 6);
    let mut net = Network::new(build_preset("tiny-fcnn", 1.0).unwrap(), 15, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        direct_reg: Some(DirectReg::new(4.0, 1e-3)),
        snapshot_b: vec![2.0, 4.0],
        ..Default::default()
    };
    let out = train(&mut net, &ds, Some(&ds), &cfg).unwrap();
    let csv = log_csv(&out.log);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(EpochLog::CSV_HEADER));
    assert_eq!(lines.count(), 2);
    assert!(out.log.iter().all(|r| r.penalty > 0.0 && r.tolerance.len() == 2));
    assert_eq!(EpochLog::CSV_HEADER, "epoch,lr,train_loss,eval_acc,penalty");
}

#[test]
fn mismatched_dataset_is_rejected() {
    let arch = build_preset("tiny-cnn", 1.0).unwrap();
    let ds = two_gaussians(8, 1);
    let mut net = Network::new(arch, 15, 1).unwrap();
    assert!(train(&mut net, &ds, None, &TrainConfig::default()).is_err());
}

#[test]
fn checkpoint_file_round_trip_after_training() {
    let ds = two_gaussians(40, 7);
    let mut net = Network::new(build_preset("tiny-fcnn", 1.0).unwrap(), 15, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        ..Default::default()
    };
    train(&mut net, &ds, None, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bnn");
    save(&path, &net, None).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(to_bytes(&back).unwrap(), to_bytes(&net).unwrap());
    assert_eq!(accuracy(&back, &ds).unwrap(), accuracy(&net, &ds).unwrap());
}

#[test]
fn hinge_plug_in() {
    assert_eq!(hinge(0.5, 32.0), 31.5);
    assert_eq!(hinge(32.0, 32.0), 0.0);
}

#[test]
fn direct_regularizer_descends_on_a_frozen_toy_neuron() {
    // a single hidden neuron over a fixed batch with frozen weights; only
    // its batch norm parameters follow the hinge gradient
    let arch = Architecture {
        input: Shape::new(vec![1, 2, 2]).unwrap(),
        classes: 2,
        layers: vec![LayerSpec::Fc { units: 1 }, LayerSpec::Fc { units: 2 }],
        pool_mode: PoolMode::Ceil,
    };
    let ds = synthesize(SynthKind::TwoGaussians, 16, 10, 15, &arch.input).unwrap();
    let mut net = Network::new(arch, 15, 10).unwrap();
    // start with every sample on the firing side of the threshold
    net.batch_norm_mut(0).unwrap().beta[0] = 3.0;
    let reg = DirectReg::new(200.0 / 15.0, 1.0);
    let lr = 1e-3;
    let mut prev = f64::INFINITY;
    for step in 0..100 {
        let trace = net
            .forward_train(ds.images().data(), ds.len(), None, FlipMode::None)
            .unwrap();
        let out = direct_reg_penalty(&net, &trace, &reg).unwrap();
        assert!(out.penalty > 0.0 && out.penalty < prev, "step {step}: {} after {prev}", out.penalty);
        prev = out.penalty;
        let zero = vec![0.0; trace.logits.len()];
        let g = net.backward(&trace, &zero, Some(&out.extra)).unwrap();
        let (dg, db) = (g.blocks[0].gamma[0], g.blocks[0].beta[0]);
        let bn = net.batch_norm_mut(0).unwrap();
        bn.gamma[0] -= lr * dg;
        bn.beta[0] -= lr * db;
    }
}

#[test]
fn direct_regularization_changes_the_objective() {
    let ds = two_gaussians(16, 9);
    let mut a = Network::new(build_preset("tiny-fcnn", 1.0).unwrap(), 15, 2).unwrap();
    let mut b = a.clone();
    let plain = plain_train_step(&mut a, ds.images().data(), ds.labels(), None).unwrap();
    let reg = DirectReg::new(64.0, 1e-2);
    let regd = plain_train_step(&mut b, ds.images().data(), ds.labels(), Some(&reg)).unwrap();
    assert_eq!(plain.loss.cross_entropy, regd.loss.cross_entropy);
    assert!(regd.loss.reg_penalty > 0.0);
    assert_eq!(regd.loss.total(), regd.loss.cross_entropy + 1e-2 * regd.loss.reg_penalty);
    assert_ne!(plain.grads.blocks[0].beta, regd.grads.blocks[0].beta);
    // the output layer carries no hinge term
    assert_eq!(plain.grads.blocks[1].beta, regd.grads.blocks[1].beta);
}
