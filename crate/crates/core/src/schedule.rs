//! Worker-count schedules.
//!
//! `rand_step` holds `n_base·min_scale` workers for the first period and then
//! redraws an integer scale uniformly from `[min_scale, max_scale]` at the
//! start of every later period. Draws come from a [`SplitMix64`] seeded with
//! the schedule seed, advanced exactly once per period.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix, SplitMix64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Static,
    /// Multiply the worker count by `k` from `epoch` on.
    Spike { epoch: usize, k: f64 },
    /// Divide the worker count by `k` from `epoch` on.
    Damp { epoch: usize, k: f64 },
    RandStep {
        period_epochs: usize,
        min_scale: u32,
        max_scale: u32,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    #[serde(flatten)]
    pub kind: ScheduleKind,
    pub n_base: usize,
}

impl Schedule {
    pub fn fixed(n_base: usize) -> Self {
        Self {
            kind: ScheduleKind::Static,
            n_base,
        }
    }

    pub fn spike(n_base: usize, epoch: usize, k: f64) -> Self {
        Self {
            kind: ScheduleKind::Spike { epoch, k },
            n_base,
        }
    }

    pub fn damp(n_base: usize, epoch: usize, k: f64) -> Self {
        Self {
            kind: ScheduleKind::Damp { epoch, k },
            n_base,
        }
    }

    pub fn rand_step(n_base: usize, period_epochs: usize, min_scale: u32, max_scale: u32, seed: u64) -> Self {
        Self {
            kind: ScheduleKind::RandStep {
                period_epochs,
                min_scale,
                max_scale,
                seed,
            },
            n_base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_base == 0 {
            return Err(Error::invalid("n_base must be positive"));
        }
        match self.kind {
            ScheduleKind::Static => {}
            ScheduleKind::Spike { k, .. } | ScheduleKind::Damp { k, .. } => {
                if !(k > 0.0 && k.is_finite()) {
                    return Err(Error::invalid("schedule ratio k must be positive"));
                }
                if matches!(self.kind, ScheduleKind::Damp { .. }) && (self.n_base as f64 / k) < 1.0 {
                    return Err(Error::invalid("damp would leave no workers"));
                }
            }
            ScheduleKind::RandStep {
                period_epochs,
                min_scale,
                max_scale,
                ..
            } => {
                if period_epochs == 0 || min_scale == 0 || min_scale > max_scale {
                    return Err(Error::invalid("rand_step needs period >= 1 and 1 <= min_scale <= max_scale"));
                }
            }
        }
        Ok(())
    }

    /// Number of workers during `epoch`. Always at least 1.
    pub fn workers_at(&self, epoch: usize) -> usize {
        let n = self.n_base as f64;
        let out = match self.kind {
            ScheduleKind::Static => n,
            ScheduleKind::Spike { epoch: at, k } => {
                if epoch >= at {
                    (n * k).round()
                } else {
                    n
                }
            }
            ScheduleKind::Damp { epoch: at, k } => {
                if epoch >= at {
                    (n / k).round()
                } else {
                    n
                }
            }
            ScheduleKind::RandStep {
                period_epochs,
                min_scale,
                max_scale,
                seed,
            } => {
                let period = epoch / period_epochs.max(1);
                let scale = if period == 0 {
                    min_scale as u64
                } else {
                    let mut rng = SplitMix64::new(seed);
                    let mut s = 0;
                    for _ in 0..period {
                        s = rng.uniform_inclusive(min_scale as u64, max_scale as u64);
                    }
                    s
                };
                n * scale as f64
            }
        };
        (out as usize).max(1)
    }

    /// `[workers_at(0), …, workers_at(epochs − 1)]`
    pub fn trace(&self, epochs: usize) -> Vec<usize> {
        (0..epochs).map(|e| self.workers_at(e)).collect()
    }

    /// Worker-count range the schedule can emit.
    pub fn range(&self) -> (usize, usize) {
        let n = self.n_base as f64;
        let (lo, hi) = match self.kind {
            ScheduleKind::Static => (n, n),
            ScheduleKind::Spike { k, .. } => ((n * k).round().min(n), (n * k).round().max(n)),
            ScheduleKind::Damp { k, .. } => ((n / k).round().min(n), (n / k).round().max(n)),
            ScheduleKind::RandStep {
                min_scale, max_scale, ..
            } => (n * min_scale as f64, n * max_scale as f64),
        };
        ((lo as usize).max(1), (hi as usize).max(1))
    }
}

/// `count` replayable random schedules derived from `template`, each with a
/// distinct seed.
pub fn sample_random_schedules(template: &Schedule, count: usize) -> Result<Vec<Schedule>> {
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    let ScheduleKind::RandStep {
        period_epochs,
        min_scale,
        max_scale,
        seed,
    } = template.kind
    else {
        return Err(Error::invalid("template must be a rand_step schedule"));
    };
    // `mix` is a bijection, so distinct inputs give distinct seeds.
    Ok((0..count as u64)
        .map(|i| Schedule::rand_step(template.n_base, period_epochs, min_scale, max_scale, mix(seed.wrapping_add(i))))
        .collect())
}
