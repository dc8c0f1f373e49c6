//! Named experiments. Blob runs last 45 epochs; one-off worker-count changes
//! happen at a fixed fraction of training (epoch ⌈0.22·E⌉ for early ones).

use crate::data::SyntheticKind;
use crate::engine::{BatchPolicy, DatasetSpec, MetricsConfig, TrainRun};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};
use crate::optim::{LrSchedule, OptimizerConfig, Strategy};
use crate::schedule::Schedule;

use super::RunConfig;

pub const PRESETS: [&str; 9] = [
    "static_small",
    "static_large",
    "spike_early",
    "spike_late",
    "damp",
    "rand_step_12x",
    "rand_step_16x",
    "theorem_quadratic",
    "noise_scan",
];

const EPOCHS: usize = 45;
const PER_WORKER: usize = 8;
const N_BASE: usize = 8;

fn change_epoch(fraction: f64) -> usize {
    (fraction * EPOCHS as f64).ceil() as usize
}

/// 8-D Gaussian blobs with four classes and a small tanh MLP.
fn blobs_run(strategy: Strategy, schedule: Schedule) -> TrainRun {
    TrainRun {
        model: ModelSpec::new(ModelKind::Mlp {
            input_dim: 8,
            hidden: 32,
            classes: 4,
        })
        .with_weight_decay(1e-4),
        dataset: DatasetSpec {
            kind: SyntheticKind::Blobs {
                dim: 8,
                classes: 4,
                separation: 4.0,
                spread: 1.0,
                label_noise: 0.0,
            },
            n: 4096,
            seed: 0,
        },
        optimizer: OptimizerConfig::new(strategy, 0.35, 0.9, PER_WORKER * N_BASE),
        lr_schedule: LrSchedule::default(),
        schedule,
        batch_policy: BatchPolicy::FixedPerWorker(PER_WORKER),
        epochs: EPOCHS,
        seed: 0,
        metrics: MetricsConfig {
            probe_samples: 256,
            record_samples: false,
        },
    }
}

fn quadratic_run(eigenvalues: Vec<f64>, sigma2: f64, schedule: Schedule, epochs: usize) -> TrainRun {
    let dim = eigenvalues.len();
    TrainRun {
        model: ModelSpec::new(ModelKind::Quadratic {
            eigenvalues,
            rotation_seed: Some(1),
        }),
        dataset: DatasetSpec {
            kind: SyntheticKind::noisy_quadratic(dim, sigma2),
            n: 16,
            seed: 0,
        },
        optimizer: OptimizerConfig::new(Strategy::PlainSgd, 0.05, 0.0, 1),
        lr_schedule: LrSchedule::constant(),
        schedule,
        batch_policy: BatchPolicy::FixedPerWorker(1),
        epochs,
        seed: 0,
        metrics: MetricsConfig::default(),
    }
}

/// A fully specified config for a named experiment, with seed 0.
pub fn preset(name: &str) -> Result<RunConfig> {
    let early = change_epoch(0.22);
    let train = match name {
        "static_small" => blobs_run(Strategy::LinearScaling, Schedule::fixed(N_BASE)),
        "static_large" => blobs_run(Strategy::LinearScaling, Schedule::fixed(12 * N_BASE)),
        "spike_early" => blobs_run(Strategy::DynamicSgd, Schedule::spike(N_BASE, early, 12.0)),
        "spike_late" => blobs_run(Strategy::DynamicSgd, Schedule::spike(N_BASE, change_epoch(2.0 / 3.0), 12.0)),
        "damp" => blobs_run(Strategy::LinearScaling, Schedule::damp(12 * N_BASE, early, 12.0)),
        "rand_step_12x" => blobs_run(Strategy::DynamicSgd, Schedule::rand_step(N_BASE, 5, 1, 12, 0)),
        "rand_step_16x" => blobs_run(Strategy::DynamicSgd, Schedule::rand_step(N_BASE, 5, 1, 16, 0)),
        // Machine count redrawn every epoch; each machine contributes one sample.
        "theorem_quadratic" => quadratic_run(vec![0.25, 0.5, 1.0, 2.0], 2.0, Schedule::rand_step(1, 1, 1, 16, 0), 200),
        "noise_scan" => quadratic_run(vec![1.0; 16], 1.0, Schedule::fixed(1), 1),
        other => {
            return Err(Error::Unknown {
                what: "preset",
                name: other.to_string(),
            })
        }
    };
    Ok(RunConfig::new(train))
}
