//! End-to-end acceptance checks. Each test prints one `criterion N PASS|FAIL`
//! line with the measured values, then asserts.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use elastic_sgd::analysis::*;
use elastic_sgd::cluster::tcp::{run_local_tcp, TcpOptions, WorkerOptions};
use elastic_sgd::cluster::wire::{decode, encode, Message};
use elastic_sgd::cluster::{run_inproc, InProcOptions};
use elastic_sgd::compare::spike_magnitude;
use elastic_sgd::config::{execute, preset, Mode, RunConfig};
use elastic_sgd::data::{make_synthetic, Dataset, SyntheticKind};
use elastic_sgd::engine::{
    data_parallel_batch, run_training, run_training_with_header, BatchPolicy, DatasetSpec, Event, MetricsConfig,
    RunRecord, TrainRun,
};
use elastic_sgd::model::{Batch, Curvature, Model, ModelKind, ModelSpec};
use elastic_sgd::optim::{LrSchedule, MomentumForm, Optimizer, OptimizerConfig, StepInput, Strategy};
use elastic_sgd::rng::SplitMix64;
use elastic_sgd::schedule::Schedule;
use elastic_sgd::ParamVector;

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n} {}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

/// The three model kinds, each with a dataset it can consume.
fn model_zoo() -> Vec<(&'static str, Model, Dataset)> {
    let quad = ModelSpec::new(ModelKind::Quadratic {
        eigenvalues: vec![0.3, 1.0, 2.5, 4.0],
        rotation_seed: Some(5),
    });
    let logistic = ModelSpec::new(ModelKind::LogisticRegression { input_dim: 2 }).with_weight_decay(1e-3);
    let mlp = ModelSpec::new(ModelKind::Mlp {
        input_dim: 8,
        hidden: 32,
        classes: 4,
    })
    .with_weight_decay(1e-4);
    let blobs8 = SyntheticKind::Blobs {
        dim: 8,
        classes: 4,
        separation: 4.0,
        spread: 1.0,
        label_noise: 0.0,
    };
    vec![
        (
            "quadratic",
            quad.build().unwrap(),
            make_synthetic(&SyntheticKind::noisy_quadratic(4, 1.0), 1024, 1).unwrap(),
        ),
        (
            "logistic",
            logistic.build().unwrap(),
            make_synthetic(&SyntheticKind::blobs(), 1024, 2).unwrap(),
        ),
        ("mlp", mlp.build().unwrap(), make_synthetic(&blobs8, 1024, 3).unwrap()),
    ]
}

fn random_batch(rng: &mut SplitMix64, n: usize, max: usize) -> Batch {
    let len = rng.uniform_inclusive(1, max as u64) as usize;
    let mut idx = std::collections::BTreeSet::new();
    while idx.len() < len {
        idx.insert(rng.uniform_inclusive(0, n as u64 - 1) as usize);
    }
    Batch::new(idx.into_iter().collect()).unwrap()
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst = Vec::new();
    for (name, model, data) in model_zoo() {
        let mut rng = SplitMix64::new(11);
        let mut max_err: f64 = 0.0;
        for _ in 0..100 {
            let mut w = model.init_params(rng.next());
            for x in w.as_mut_slice() {
                *x += (rng.next() as f64 / u64::MAX as f64 - 0.5) * 0.5;
            }
            let batch = random_batch(&mut rng, data.len(), 16);
            let g = model.grad(&w, &data, &batch).unwrap();
            for i in 0..w.dim() {
                let mut plus = w.clone();
                plus.as_mut_slice()[i] += h;
                let mut minus = w.clone();
                minus.as_mut_slice()[i] -= h;
                let fd = (model.loss(&plus, &data, &batch).unwrap() - model.loss(&minus, &data, &batch).unwrap()) / (2.0 * h);
                let a = g.as_slice()[i];
                // Relative error with a floor for near-zero components.
                max_err = max_err.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3));
            }
        }
        worst.push((name, max_err));
    }
    let elapsed = start.elapsed();
    let pass = worst.iter().all(|w| w.1 < 1e-5) && within(elapsed, 10);
    report(1, pass, format!("max relative error {worst:?} over 100 pairs each, {elapsed:.2?} (< 10 s)"));
    assert!(pass);
}

#[test]
fn criterion_02_momentum_forms_agree() {
    let mut worst = Vec::new();
    for (name, model, data) in model_zoo() {
        let lr = if name == "quadratic" { 0.02 } else { 0.1 };
        let make = |form| {
            let mut c = OptimizerConfig::new(Strategy::MomentumSgd, lr, 0.9, 16);
            c.momentum_form = form;
            Optimizer::new(c, model.param_count()).unwrap()
        };
        let (mut ou, mut ov) = (make(MomentumForm::U), make(MomentumForm::V));
        let mut wu = model.init_params(4);
        let mut wv = wu.clone();
        let mut max_diff: f64 = 0.0;
        for t in 0..1000u64 {
            let start = (t as usize * 16) % data.len();
            let idx: Vec<usize> = (start..start + 16).collect();
            let mut decay = ParamVector::zeros(wu.dim());
            let (_, gu) = model.batch_sums(&wu, &data, &idx).unwrap();
            model.add_decay_grad(&wu, &mut decay);
            ou.step(&mut wu, StepInput { decay: Some(&decay), ..StepInput::new(&gu, 16, 1.0, t) }).unwrap();
            let mut decay = ParamVector::zeros(wv.dim());
            let (_, gv) = model.batch_sums(&wv, &data, &idx).unwrap();
            model.add_decay_grad(&wv, &mut decay);
            ov.step(&mut wv, StepInput { decay: Some(&decay), ..StepInput::new(&gv, 16, 1.0, t) }).unwrap();
            max_diff = max_diff.max(wu.max_abs_diff(&wv));
        }
        worst.push((name, max_diff));
    }
    let pass = worst.iter().all(|w| w.1 <= 1e-12);
    report(2, pass, format!("max |w_u − w_v| over 1000 steps {worst:?} (≤ 1e-12)"));
    assert!(pass);
}

fn small_run(strategy: Strategy, schedule: Schedule, epochs: usize) -> TrainRun {
    TrainRun {
        model: ModelSpec::new(ModelKind::Mlp {
            input_dim: 2,
            hidden: 8,
            classes: 2,
        })
        .with_weight_decay(1e-4),
        dataset: DatasetSpec {
            kind: SyntheticKind::blobs(),
            n: 256,
            seed: 9,
        },
        optimizer: OptimizerConfig::new(strategy, 0.1, 0.9, 16),
        lr_schedule: LrSchedule::default(),
        schedule,
        batch_policy: BatchPolicy::FixedPerWorker(4),
        epochs,
        seed: 9,
        metrics: MetricsConfig {
            probe_samples: 32,
            record_samples: true,
        },
    }
}

#[test]
fn criterion_03_parallelism_invariance() {
    let mut worst: f64 = 0.0;
    for (_, model, data) in model_zoo() {
        let w = model.init_params(6);
        let batch = Batch::range(0, 960).unwrap();
        let one = data_parallel_batch(&model, &data, &w, &batch, 1).unwrap();
        for n in [2, 7, 8, 96] {
            let agg = data_parallel_batch(&model, &data, &w, &batch, n).unwrap();
            let scale = one.grad_sum.as_slice().iter().fold(1.0f64, |m, x| m.max(x.abs()));
            worst = worst.max(agg.grad_sum.max_abs_diff(&one.grad_sum) / scale);
        }
    }

    let run = small_run(Strategy::DynamicSgd, Schedule::spike(4, 3, 3.0), 12);
    let prep = run.prepare().unwrap();
    let header = serde_json::to_value(&run).unwrap();
    let sim = run_training_with_header(&prep, header.clone()).unwrap();
    let cluster = run_inproc(&prep, &InProcOptions::default(), header).unwrap();
    let identical = sim.to_jsonl() == cluster.to_jsonl();
    let pass = worst <= 1e-10 && identical && sim.entries.len() >= 100;
    report(
        3,
        pass,
        format!(
            "max scaled aggregate difference {worst:.2e} for N in {{2,7,8,96}} (≤ 1e-10); in-process cluster record identical: {identical} over {} updates",
            sim.entries.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_noise_scaling() {
    let start = Instant::now();
    let model = ModelSpec::new(ModelKind::Quadratic {
        eigenvalues: vec![1.0; 16],
        rotation_seed: None,
    })
    .build()
    .unwrap();
    let data = make_synthetic(&SyntheticKind::noisy_quadratic(16, 1.0), 1, 12).unwrap();
    let w = model.init_params(0);
    let scan = noise_scan(&model, &w, &data, &doubling_batches(256), 200, 13).unwrap();
    let elapsed = start.elapsed();
    let slope = scan.fit.slope;
    let pass = (slope + 1.0).abs() <= 0.05 && within(elapsed, 60) && scan.estimates.iter().all(|e| e.reportable());
    report(4, pass, format!("log-log slope {slope:.4} over B = 1..256 (−1 ± 0.05), {elapsed:.2?} (< 60 s)"));
    assert!(pass);
}

#[test]
fn criterion_05_momentum_variance_law() {
    let mut rows = Vec::new();
    for mu in [0.5, 0.9, 0.99] {
        let got = momentum_variance_ratio(mu, 400 * min_steps(mu), 14).unwrap();
        rows.push((mu, got, stationary_ratio(mu)));
    }
    let pass = rows.iter().all(|(_, got, want)| (got / want - 1.0).abs() <= 0.1);
    let detail: Vec<String> = rows
        .iter()
        .map(|(mu, got, want)| format!("μ={mu}: {got:.3} vs {want:.3}"))
        .collect();
    report(5, pass, format!("Var(u)/Var(g) {} (±10%)", detail.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_06_rescale_noise_inflation() {
    let mut parts = Vec::new();
    let mut pass = true;
    for k in [2usize, 4, 12] {
        let inf = rescale_inflation(k as f64, 0.9, 4096, 15).unwrap();
        let ds = update_variance_around_change(&ChangeVarianceConfig::new(Strategy::DynamicSgd, k, 1000, 16)).unwrap();
        let ls = update_variance_around_change(&ChangeVarianceConfig::new(Strategy::LinearScaling, k, 1000, 16)).unwrap();
        pass &= (inf.ratio / (k * k) as f64 - 1.0).abs() <= 0.1 && ds.first_ratio <= 2.0;
        parts.push(format!(
            "k={k}: population ×{:.2} (k²={}), first update variance ratio dynamic_sgd {:.3} vs linear_scaling {:.2}",
            inf.ratio,
            k * k,
            ds.first_ratio,
            ls.first_ratio
        ));
    }
    report(6, pass, parts.join("; "));
    assert!(pass);
}

#[test]
fn criterion_07_spike_and_damp() {
    let start = Instant::now();
    let run = |name: &str, strategy: Strategy, seed: u64| -> RunRecord {
        let mut cfg = preset(name).unwrap().with_seed(seed);
        cfg.train.optimizer.strategy = strategy;
        execute(&cfg).unwrap()
    };
    let (mut ls_spikes, mut ds_calm, mut damp_calm) = (0, 0, 0);
    let (mut ls_final, mut ds_final) = (0.0, 0.0);
    let mut per_seed = Vec::new();
    for seed in 0..5 {
        let ls = run("spike_early", Strategy::LinearScaling, seed);
        let ds = run("spike_early", Strategy::DynamicSgd, seed);
        let damp = run("damp", Strategy::LinearScaling, seed);
        let (a, b, c) = (
            spike_magnitude(&ls.entries),
            spike_magnitude(&ds.entries),
            spike_magnitude(&damp.entries),
        );
        ls_spikes += (a >= 1.5) as u32;
        ds_calm += (b < 1.2) as u32;
        damp_calm += (c < 1.5) as u32;
        ls_final += ls.summary.final_loss / 5.0;
        ds_final += ds.summary.final_loss / 5.0;
        assert!(!ls.summary.diverged && !ds.summary.diverged && !damp.summary.diverged);
        per_seed.push(format!("{a:.2}/{b:.2}/{c:.2}"));
    }
    let elapsed = start.elapsed();
    let pass = ls_spikes >= 4 && ds_calm >= 4 && damp_calm >= 4 && ds_final <= ls_final && within(elapsed, 300);
    report(
        7,
        pass,
        format!(
            "spike ls/ds/damp per seed [{}]; ls ≥ 1.5 on {ls_spikes}/5, ds < 1.2 on {ds_calm}/5, damp < 1.5 on {damp_calm}/5; mean final loss ds {ds_final:.4} vs ls {ls_final:.4}; {elapsed:.1?} (< 300 s)",
            per_seed.join(" ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_theorem() {
    let start = Instant::now();
    // (a) worked constants: C=1, σ1²=1, L_Δ=0.5 give C1 = C2 = 1.
    let c = TheoremConstants::new(1.0, 0.5, 1.0, 4.0, 1.0).unwrap();
    let trace = vec![4.0; 100];
    let steps = theorem1_step_sizes(&c, &trace).unwrap();
    let bound = theorem1_bound(&c, &trace, 1.0).unwrap();
    let exact = steps.etas.iter().all(|e| (e - 0.2).abs() < 1e-12) && (bound - 0.05).abs() < 1e-12;

    // (b) β = 1 gives the smallest bound on random traces.
    let wide = TheoremConstants::new(1.0, 0.5, 1.0, 16.0, 1.0).unwrap();
    let mut tight = 0;
    for s in 0..20 {
        let tr = random_trace(200, 16, s);
        let b1 = theorem1_bound(&wide, &tr, 1.0).unwrap();
        let cauchy = cauchy_bound(&wide, &tr).unwrap();
        let ok = [0.0, 0.5, 2.0]
            .iter()
            .all(|&b| b1 <= theorem1_bound(&wide, &tr, b).unwrap() * (1.0 + 1e-12))
            && (b1 - cauchy).abs() <= 1e-12 * cauchy;
        tight += ok as u32;
    }

    // (c) Monte-Carlo over a grid of quadratics, noise levels, starting
    // points, β and machine ranges, each with 100 seeds.
    let (mut holds, mut total, mut worst) = (0, 0, 0.0f64);
    let spectra = [vec![1.0; 4], vec![0.25, 0.5, 1.0, 2.0], vec![2.0; 8]];
    for (i, eig) in spectra.iter().enumerate() {
        let curv = Curvature::new(eig, Some(i as u64)).unwrap();
        for sigma1_sq in [0.5, 2.0] {
            for scale in [0.5, 2.0] {
                for beta in [0.0, 0.5, 1.0, 2.0] {
                    for k_max in [1.0, 4.0, 16.0] {
                        let w0 = ParamVector::new(vec![scale; eig.len()]);
                        let c = TheoremConstants::for_quadratic(&curv, &w0, sigma1_sq, k_max, beta).unwrap();
                        let tr = admissible_trace(&c, 400, total as u64).unwrap();
                        let rep = verify_theorem1(&curv, &w0, &c, &tr, 100, 17 + total as u64).unwrap();
                        holds += rep.holds as u32;
                        total += 1;
                        worst = worst.max(rep.min_mean_grad_sq / rep.bound);
                    }
                }
            }
        }
    }
    let frac = holds as f64 / total as f64;
    let elapsed = start.elapsed();
    let pass = exact && tight == 20 && frac >= 0.95 && within(elapsed, 300);
    report(
        8,
        pass,
        format!(
            "(a) η = {:.12}, bound = {bound:.12}; (b) β=1 tightest on {tight}/20 traces; (c) bound holds in {holds}/{total} configurations (worst ratio {worst:.3}); {elapsed:.2?} (< 300 s)",
            steps.etas[0]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_optimal_convex_lr() {
    let mut max_err: f64 = 0.0;
    let mut max_dev: f64 = 0.0;
    for g2 in [0.01, 0.5, 1.0, 3.0] {
        for c in [0.5, 1.0, 4.0] {
            for sigma1_sq in [1.0, 100.0, 1e4] {
                let g = GradSignal::new(g2).unwrap();
                let slope = g2 / (c * sigma1_sq);
                for k in 1..=256 {
                    let k = k as f64;
                    let lr = optimal_lr_convex(g, c, sigma1_sq, k).unwrap();
                    let closed = k * g2 / (c * (k * g2 + sigma1_sq));
                    max_err = max_err.max((lr.exact - closed).abs());
                    if k * g2 <= sigma1_sq / 100.0 {
                        max_dev = max_dev.max(((lr.exact / k) / slope - 1.0).abs());
                    }
                }
            }
        }
    }
    let pass = max_err <= 1e-12 && max_dev <= 0.01;
    report(
        9,
        pass,
        format!("closed-form error {max_err:.1e} (≤ 1e-12); exact(k)/k deviation {:.3}% where kG² ≤ σ1²/100 (≤ 1%)", max_dev * 100.0),
    );
    assert!(pass);
}

fn random_message(rng: &mut SplitMix64) -> Message {
    let f = |rng: &mut SplitMix64| f64::from_bits(rng.next());
    let len = |rng: &mut SplitMix64| rng.uniform_inclusive(0, 40) as usize;
    match rng.uniform_inclusive(0, 8) {
        0 => Message::Hello { worker_id: rng.next() as u32 },
        1 => Message::Heartbeat {
            worker_id: rng.next() as u32,
            seq: rng.next(),
        },
        2 => Message::Assign {
            worker_id: rng.next() as u32,
            epoch: rng.next(),
            iter: rng.next(),
            version: rng.next(),
            samples: (0..len(rng)).map(|_| rng.next()).collect(),
        },
        3 => Message::PushGrad {
            worker_id: rng.next() as u32,
            iter: rng.next(),
            version: rng.next(),
            local_batch: rng.next() as u32,
            loss_sum: f(rng),
            grad: (0..len(rng)).map(|_| f(rng)).collect(),
        },
        4 => Message::PullWeights { worker_id: rng.next() as u32 },
        5 => Message::Weights {
            version: rng.next(),
            payload: (0..len(rng)).map(|_| f(rng)).collect(),
        },
        6 => Message::Resize {
            roster: (0..len(rng)).map(|_| rng.next() as u32).collect(),
        },
        7 => Message::Shutdown,
        _ => Message::Setup {
            worker_id: rng.next() as u32,
            config: (0..len(rng)).map(|_| char::from_u32(rng.uniform_inclusive(32, 0x2FFF) as u32).unwrap_or('?')).collect(),
        },
    }
}

/// Bitwise equality, so NaN payloads compare equal to themselves.
fn same_bits(a: &Message, b: &Message) -> bool {
    encode(a) == encode(b)
}

#[test]
fn criterion_10_protocol_robustness() {
    let mut rng = SplitMix64::new(18);
    let mut ok = 0;
    for _ in 0..100_000 {
        let m = random_message(&mut rng);
        let back = decode(&encode(&m)).unwrap();
        ok += same_bits(&m, &back) as u32;
    }

    let mut run = small_run(Strategy::DynamicSgd, Schedule::fixed(4), 2);
    run.model = ModelSpec::new(ModelKind::LogisticRegression { input_dim: 2 });
    run.dataset.n = 120;
    let prep = run.prepare().unwrap();
    let opts = TcpOptions {
        heartbeat_ms: 100,
        eviction_threshold: 3,
        wait_for_workers: 4,
        ..TcpOptions::default()
    };
    let normal = WorkerOptions {
        heartbeat_ms: 100,
        ..WorkerOptions::default()
    };
    let dropper = WorkerOptions {
        fail_at_version: Some(3),
        ..normal.clone()
    };
    let workers = [dropper, normal.clone(), normal.clone(), normal];
    let (rec, _) = run_local_tcp(&prep, &opts, 4, &workers, serde_json::Value::Null).unwrap();
    let restarted = rec.summary.events.iter().any(|e| {
        matches!(
            e,
            Event::Restart {
                iter: 3,
                old_workers: 4,
                new_workers: 3
            }
        )
    });
    let mut per_epoch: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for e in &rec.entries {
        per_epoch.entry(e.epoch).or_default().extend(e.samples.as_ref().unwrap());
    }
    let clean = per_epoch.values_mut().all(|s| {
        s.sort_unstable();
        *s == (0..120).collect::<Vec<_>>()
    }) && per_epoch.len() == 2;
    let pass = ok == 100_000 && restarted && clean;
    report(
        10,
        pass,
        format!("{ok}/100000 fuzzed messages round-trip; TCP drop restarted the barrier: {restarted}; every sample exactly once per epoch: {clean}"),
    );
    assert!(pass);
}

#[test]
fn criterion_11_determinism() {
    let mut configs: Vec<RunConfig> = ["spike_early", "damp", "rand_step_12x", "theorem_quadratic"]
        .iter()
        .map(|name| {
            let mut cfg = preset(name).unwrap().with_seed(19);
            cfg.train.epochs = cfg.train.epochs.min(12);
            cfg
        })
        .collect();
    let mut inproc = RunConfig::new(small_run(Strategy::LinearScaling, Schedule::rand_step(2, 1, 1, 3, 4), 4));
    inproc.mode = Mode::ClusterInproc;
    configs.push(inproc);
    let mut same = 0;
    for cfg in &configs {
        let a = execute(cfg).unwrap();
        let b = execute(cfg).unwrap();
        same += (a.to_jsonl() == b.to_jsonl()) as usize;
    }
    // Two independent runs of the plain engine as well.
    let run = small_run(Strategy::Decoupled, Schedule::damp(4, 2, 2.0), 4);
    let prep = run.prepare().unwrap();
    let plain = run_training(&prep).unwrap() == run_training(&prep).unwrap();
    let pass = same == configs.len() && plain;
    report(11, pass, format!("{same}/{} configs bit-identical on rerun; engine rerun identical: {plain}", configs.len()));
    assert!(pass);
}
