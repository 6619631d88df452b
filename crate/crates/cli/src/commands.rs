// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};

use bnn_bet::channel::FlipMode;
use bnn_bet::data::{Dataset, Split};
use bnn_bet::eval::{accuracy, default_rates_pct, summarize, sweep as run_sweep};
use bnn_bet::model::checkpoint;
use bnn_bet::model::{build_preset, parse_width_scale, Network};
use bnn_bet::tolerance::{
    network_tolerance, probe_flip_budget, tightness_fixture, verify_random_neurons, verify_flip_bound, ToleranceConfig,
    VerifyMode, RANDOMIZED_MIN_SAMPLES,
};
use bnn_bet::train::{log_csv, train_with, DirectReg, TrainConfig};
use serde_json::json;

use crate::config::{join_numbers, parse_number_list, Resolver};
use crate::data_spec::{load_split, DataInfo, DataSpec, SYNTH_Z};
use crate::error::{CliError, CliResult};
use crate::manifest::{now_ms, RunManifest};
use crate::{ShowArgs, SweepArgs, ToleranceArgs, TrainArgs, VerifyArgs};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(dir: &Path, name: &str, text: &str, outputs: &mut Vec<String>) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    outputs.push(name.to_string());
    Ok(())
}

fn synth_default(spec: &DataSpec, n: usize) -> usize {
    if matches!(spec, DataSpec::Synth(_)) {
        n
    } else {
        0
    }
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let started = now_ms();
    let mut r = Resolver::load(a.common.config.as_deref())?;
    let preset: String = r.get("preset", a.preset, "tiny-fcnn".into())?;
    let width: String = r.get("width_scale", a.width_scale, "1".into())?;
    let data: DataSpec = r.get("data", a.data, "synth:two-gaussians".parse().unwrap())?;
    let train_cap = r.get("train_samples", a.train_samples, synth_default(&data, 512))?;
    let test_cap = r.get("test_samples", a.test_samples, synth_default(&data, 256))?;
    let data_seed = r.get("data_seed", a.data_seed, 0u64)?;
    let defaults = TrainConfig::default();
    let epochs = r.get("epochs", a.epochs, defaults.epochs)?;
    let batch_size = r.get("batch_size", a.batch_size, defaults.batch_size)?;
    let lr = r.get("lr", a.lr, defaults.lr)?;
    let lr_decay = r.get("lr_decay", a.lr_decay, defaults.lr_decay)?;
    let lr_decay_every = r.get("lr_decay_every", a.lr_decay_every, defaults.lr_decay_every)?;
    let flip_mode: String = r.get("flip_mode", a.flip_mode, FlipMode::None.as_str().into())?;
    let flip_p = r.get("flip_p", a.flip_p, 0.0)?;
    let reg_b = r.get_opt("direct_reg", a.direct_reg)?;
    let reg_lambda = r.get_opt("reg_lambda", a.reg_lambda)?;
    let seed = r.get("seed", a.seed, 0u64)?;
    let snapshot: Option<String> = r.get_opt("snapshot_b", a.snapshot_b)?;
    let settings = r.finish()?;

    let flip_mode = FlipMode::parse(&flip_mode)?;
    if flip_mode != FlipMode::None && reg_b.is_some() {
        return Err(CliError::Config(
            "flip training and direct regularization cannot be combined".into(),
        ));
    }
    if reg_lambda.is_some() && reg_b.is_none() {
        return Err(CliError::Config("reg_lambda needs direct_reg".into()));
    }
    let cfg = TrainConfig {
        epochs,
        batch_size,
        lr,
        lr_decay,
        lr_decay_every,
        flip_mode,
        flip_p,
        direct_reg: reg_b.map(|b| DirectReg::new(b, reg_lambda.unwrap_or(1e-3))),
        seed,
        snapshot_b: snapshot.as_deref().map(parse_number_list).transpose()?.unwrap_or_default(),
        ..defaults
    };
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let arch = build_preset(&preset, parse_width_scale(&width)?)?;
    let train_set = load_split(&data, Split::Train, train_cap, data_seed, &arch.input, SYNTH_Z)?;
    let test_set = load_split(&data, Split::Test, test_cap, data_seed, &arch.input, SYNTH_Z)?;
    let mut net = Network::new(arch, train_set.z(), seed)?;
    println!(
        "training {preset} ({} hidden neurons) on {} samples, {epochs} epochs",
        net.neuron_count(),
        train_set.len()
    );
    let outcome = train_with(&mut net, &train_set, Some(&test_set), &cfg, |e| {
        println!(
            "epoch {:>3}  lr {:.3e}  loss {:.5}  eval {:.2}%",
            e.epoch, e.lr, e.train_loss, e.eval_acc
        );
    })?;

    let out = &a.common.out;
    create_dir(out)?;
    let mut outputs = Vec::new();
    let meta = json!({ "preset": preset, "width_scale": width, "settings": settings });
    checkpoint::save(&out.join("model.bnn"), &net, Some(&meta))?;
    outputs.extend(["model.bnn".to_string(), "model.json".to_string()]);
    if let Some(best) = &outcome.best {
        checkpoint::save(&out.join("best.bnn"), best, Some(&meta))?;
        outputs.extend(["best.bnn".to_string(), "best.json".to_string()]);
    }
    write(out, "train_log.csv", &log_csv(&outcome.log), &mut outputs)?;
    if !cfg.snapshot_b.is_empty() {
        let mut s = String::from("epoch,b,T_b\n");
        for e in &outcome.log {
            for (b, t) in cfg.snapshot_b.iter().zip(&e.tolerance) {
                s.push_str(&format!("{},{b},{t:.17e}\n", e.epoch));
            }
        }
        write(out, "train_tolerance.csv", &s, &mut outputs)?;
    }
    let clean = accuracy(&net, &test_set)?;
    println!("final eval accuracy {clean:.2}%");

    let mut m = RunManifest::new("train", settings, started);
    m.detail = json!({
        "train_config": cfg,
        "architecture": net.architecture(),
        "train_data": DataInfo::of(&data, &train_set),
        "test_data": DataInfo::of(&data, &test_set),
        "final_eval_acc": clean,
        "best_epoch": outcome.best_epoch,
        "best_eval_acc": outcome.best_eval_acc,
    });
    m.outputs = outputs;
    m.write(out)?;
    Ok(())
}

/// Checkpoint plus the evaluation split, falling back to the data the
/// checkpoint was trained on.
fn model_and_data(
    r: &mut Resolver,
    model: Option<PathBuf>,
    data: Option<DataSpec>,
    test_samples: Option<usize>,
    data_seed: Option<u64>,
) -> CliResult<(Network, DataSpec, Dataset)> {
    let path: Option<String> = r.get_opt("model", model.map(|p| p.display().to_string()))?;
    let path = PathBuf::from(path.ok_or_else(|| CliError::Config("--model is required".into()))?);
    let net = checkpoint::load(&path)?;
    let trained = checkpoint::load_sidecar(&path)?
        .and_then(|m| m.get("settings").cloned())
        .unwrap_or_default();
    let recorded = |k: &str| trained.get(k).and_then(|v| v.as_str()).map(str::to_string);
    let data = match (data, recorded("data")) {
        (Some(d), _) => Some(d),
        (None, Some(s)) => Some(s.parse().map_err(CliError::Config)?),
        (None, None) => None,
    };
    let data: Option<DataSpec> = r.get_opt("data", data)?;
    let data = data.ok_or_else(|| CliError::Config("--data is required".into()))?;
    let cap_default = recorded("test_samples")
        .and_then(|s| s.parse().ok())
        .unwrap_or(synth_default(&data, 256));
    let cap = r.get("test_samples", test_samples, cap_default)?;
    let seed_default = recorded("data_seed").and_then(|s| s.parse().ok()).unwrap_or(0);
    let data_seed = r.get("data_seed", data_seed, seed_default)?;
    let shape = net.architecture().input.clone();
    let ds = load_split(&data, Split::Test, cap, data_seed, &shape, net.z())?;
    Ok((net, data, ds))
}

pub fn sweep(a: SweepArgs) -> CliResult<()> {
    let started = now_ms();
    let mut r = Resolver::load(a.common.config.as_deref())?;
    let (net, data, ds) = model_and_data(&mut r, a.model, a.data, a.test_samples, a.data_seed)?;
    let rates: String = r.get("rates", a.rates, join_numbers(&default_rates_pct()))?;
    let trials = r.get("trials", a.trials, 5usize)?;
    let seed = r.get("seed", a.seed, 0u64)?;
    let settings = r.finish()?;
    let rates = parse_number_list(&rates)?;
    if trials == 0 {
        return Err(CliError::Config("trials must be positive".into()));
    }

    let rows = run_sweep(&net, &ds, &rates, trials, seed)?;
    let mut csv = String::from("rate_pct,trial,accuracy_pct\n");
    for row in &rows {
        csv.push_str(&format!("{},{},{:.17e}\n", row.rate_pct, row.trial, row.accuracy_pct));
    }
    let mut summary = String::from("rate_pct,mean,half_range,std\n");
    for s in summarize(&rows) {
        summary.push_str(&format!("{},{:.17e},{:.17e},{:.17e}\n", s.rate_pct, s.mean, s.half_range, s.std));
        println!("{:>6.2}%  {:.2}% +- {:.2}", s.rate_pct, s.mean, s.half_range);
    }

    let out = &a.common.out;
    create_dir(out)?;
    let mut outputs = Vec::new();
    write(out, "sweep.csv", &csv, &mut outputs)?;
    write(out, "sweep_summary.csv", &summary, &mut outputs)?;
    let mut m = RunManifest::new("sweep", settings, started);
    m.detail = json!({ "data": DataInfo::of(&data, &ds), "rows": rows.len() });
    m.outputs = outputs;
    m.write(out)?;
    Ok(())
}

pub fn tolerance(a: ToleranceArgs) -> CliResult<()> {
    let started = now_ms();
    let mut r = Resolver::load(a.common.config.as_deref())?;
    let (net, data, ds) = model_and_data(&mut r, a.model, a.data, a.test_samples, a.data_seed)?;
    let levels: String = r.get("b_levels", a.b_levels, join_numbers(&ToleranceConfig::default().b_levels))?;
    let settings = r.finish()?;
    let levels = parse_number_list(&levels)?;

    let report = network_tolerance(&net, &ds, &levels)?;
    let mut csv = String::from("b,T_b\n");
    for (b, t) in report.b_levels.iter().zip(&report.t_network) {
        csv.push_str(&format!("{b},{t:.17e}\n"));
        println!("T^{b} = {t:.6}");
    }

    let out = &a.common.out;
    create_dir(out)?;
    let mut outputs = Vec::new();
    write(out, "tolerance.csv", &csv, &mut outputs)?;
    write(out, "tolerance_layers.csv", &report.to_csv(), &mut outputs)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Other(e.to_string()))?;
    write(out, "tolerance.json", &(json + "\n"), &mut outputs)?;
    let mut m = RunManifest::new("tolerance", settings, started);
    m.detail = json!({ "data": DataInfo::of(&data, &ds) });
    m.outputs = outputs;
    m.write(out)?;
    Ok(())
}

pub fn verify_theorem(a: VerifyArgs) -> CliResult<()> {
    let started = now_ms();
    let mut r = Resolver::load(a.common.config.as_deref())?;
    let count = r.get("count", a.count, 10_000usize)?;
    let max_fan_in = r.get("max_fan_in", a.max_fan_in, 12usize)?;
    let seed = r.get("seed", a.seed, 0u64)?;
    let mode: String = r.get("mode", a.mode, "exhaustive".into())?;
    let fixture: String = r.get("fixture", a.fixture, "random".into())?;
    let extra = r.get("extra_budget", a.extra_budget, 0usize)?;
    let mode = match mode.as_str() {
        "exhaustive" => VerifyMode::Exhaustive,
        "randomized" => VerifyMode::Randomized {
            samples: r.get("samples", a.samples, RANDOMIZED_MIN_SAMPLES)?,
            seed,
        },
        other => return Err(CliError::Config(format!("unknown mode `{other}`"))),
    };
    let settings = r.finish()?;

    let (failures, detail) = match fixture.as_str() {
        "random" => {
            let s = verify_random_neurons(count, max_fan_in, seed, mode, extra)?;
            println!(
                "{} neurons (fan-in <= {max_fan_in}), {} with a non-zero budget, {} flip sets checked",
                s.neurons, s.nontrivial, s.flip_sets_checked
            );
            for f in &s.examples {
                println!(
                    "counterexample: neuron {} b = {:.4} flips {:?} at position {}: h {} -> {}",
                    f.index, f.b, f.counterexample.flips, f.counterexample.position, f.counterexample.h_before,
                    f.counterexample.h_after
                );
            }
            (s.failures, serde_json::to_value(&s).map_err(|e| CliError::Other(e.to_string()))?)
        }
        "tightness" => {
            let neuron = tightness_fixture();
            let b = 2.0;
            let v = if extra == 0 {
                verify_flip_bound(&neuron, b, mode)?
            } else {
                probe_flip_budget(&neuron, 1 + extra, mode)?
            };
            println!("tightness fixture, b = {b}, budget {}: {} flip sets checked", v.budget, v.flip_sets_checked);
            if let Some(c) = &v.counterexample {
                println!("counterexample: flips {:?}: h {} -> {}", c.flips, c.h_before, c.h_after);
            }
            let failures = usize::from(!v.holds());
            (failures, json!({ "neuron": neuron, "b": b, "verdict": v }))
        }
        other => return Err(CliError::Config(format!("unknown fixture `{other}`"))),
    };

    let out = &a.common.out;
    create_dir(out)?;
    let mut outputs = Vec::new();
    let text = serde_json::to_string_pretty(&detail).map_err(|e| CliError::Other(e.to_string()))?;
    write(out, "verify.json", &(text + "\n"), &mut outputs)?;
    let mut m = RunManifest::new("verify-theorem", settings, started);
    m.detail = json!({ "failures": failures });
    m.outputs = outputs;
    m.write(out)?;
    if failures > 0 {
        return Err(CliError::Verification(format!("{failures} counterexample(s)")));
    }
    println!("no counterexamples");
    Ok(())
}

pub fn show_manifest(a: ShowArgs) -> CliResult<()> {
    let m = RunManifest::read(&a.path)?;
    if a.as_config {
        print!("{}", m.to_config());
    } else {
        let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Other(e.to_string()))?;
        println!("{text}");
    }
    Ok(())
}
