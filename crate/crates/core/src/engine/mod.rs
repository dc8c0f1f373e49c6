//! Synchronous data-parallel training under a worker-count schedule.
//!
//! [`Trainer`] is the single sequencer of a run. Each update is planned
//! ([`Trainer::plan`]) for a given worker count, its gradient is computed
//! somewhere (here by [`data_parallel_batch`], or by cluster workers), and the
//! aggregate is committed ([`Trainer::commit`]). A plan that is never
//! committed consumes no samples, so an iteration can be abandoned and
//! re-planned under a different roster.
//!
//! Sample order is shuffled per epoch from `(seed, epoch)` alone, so every
//! strategy and every roster sees the same sequence of samples.

mod partition;
mod record;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::{make_synthetic, Dataset, SyntheticKind};
use crate::error::{Error, Result};
use crate::model::{Batch, Model, ModelSpec};
use crate::optim::{LrSchedule, Optimizer, OptimizerConfig, StepInput};
use crate::params::ParamVector;
use crate::schedule::Schedule;

pub use partition::{
    accumulate_large_batch, data_parallel_batch, partition_batch, partition_ranges, worker_sums, Aggregate,
    BatchPolicy,
};
pub use record::{Event, Header, RecordEntry, RunRecord, Summary};

/// Losses above this magnitude count as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub n: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn build(&self) -> Result<Dataset> {
        make_synthetic(&self.kind, self.n, self.seed)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// Evaluate the loss on the first `probe_samples` samples at every update.
    #[serde(default)]
    pub probe_samples: usize,
    /// Store the sample ids of every update in the record.
    #[serde(default)]
    pub record_samples: bool,
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub model: ModelSpec,
    pub dataset: DatasetSpec,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    pub schedule: Schedule,
    pub batch_policy: BatchPolicy,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl TrainRun {
    pub fn prepare(&self) -> Result<PreparedRun> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        self.optimizer.validate()?;
        self.schedule.validate()?;
        self.batch_policy.validate()?;
        let model = self.model.build()?;
        let data = self.dataset.build()?;
        if data.dim() != model.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.input_dim(),
                got: data.dim(),
            });
        }
        Ok(PreparedRun {
            run: self.clone(),
            model,
            data,
        })
    }
}

/// A validated run with its model and dataset materialized.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub run: TrainRun,
    pub model: Model,
    pub data: Dataset,
}

/// One synchronous update: which samples, split over which workers.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationPlan {
    pub t: u64,
    pub epoch: usize,
    pub iter_in_epoch: usize,
    pub n_workers: usize,
    /// Batch size the policy asks for; larger than the batch when `short`.
    pub nominal_batch: usize,
    pub batch: Batch,
    /// Per-worker ranges into `batch.indices()`, in worker order.
    pub slices: Vec<Range<usize>>,
    pub short: bool,
    pub idle_workers: bool,
    /// Samples of the epoch consumed before this update.
    cursor: usize,
}

impl IterationPlan {
    pub fn worker_samples(&self, worker: usize) -> &[usize] {
        &self.batch.indices()[self.slices[worker].clone()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Continue,
    Diverged,
}

pub struct Trainer<'a> {
    prep: &'a PreparedRun,
    w: ParamVector,
    opt: Optimizer,
    epoch: usize,
    order: Vec<usize>,
    cursor: usize,
    iter_in_epoch: usize,
    t: u64,
    probe: Option<Batch>,
    entries: Vec<RecordEntry>,
    events: Vec<Event>,
    diverged: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(prep: &'a PreparedRun) -> Result<Self> {
        let run = &prep.run;
        let w = prep.model.init_params(run.seed);
        let opt = Optimizer::new(run.optimizer.clone(), w.dim())?;
        let probe = match run.metrics.probe_samples {
            0 => None,
            p => Some(Batch::range(0, p.min(prep.data.len()))?),
        };
        Ok(Self {
            prep,
            w,
            opt,
            epoch: 0,
            order: prep.data.epoch_order(run.seed, 0),
            cursor: 0,
            iter_in_epoch: 0,
            t: 0,
            probe,
            entries: Vec::new(),
            events: Vec::new(),
            diverged: false,
        })
    }

    pub fn weights(&self) -> &ParamVector {
        &self.w
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.opt
    }

    /// Number of committed updates.
    pub fn updates(&self) -> u64 {
        self.t
    }

    pub fn entries(&self) -> &[RecordEntry] {
        &self.entries
    }

    pub fn push_event(&mut self, e: Event) {
        self.events.push(e);
    }

    /// Epoch of the next update, or `None` when the run is over.
    pub fn next_epoch(&mut self) -> Option<usize> {
        if self.diverged {
            return None;
        }
        if self.cursor >= self.order.len() {
            self.epoch += 1;
            self.cursor = 0;
            self.iter_in_epoch = 0;
            if self.epoch < self.prep.run.epochs {
                self.order = self.prep.data.epoch_order(self.prep.run.seed, self.epoch);
            }
        }
        (self.epoch < self.prep.run.epochs).then_some(self.epoch)
    }

    /// Plans the next update for `n_workers`. Does not consume samples.
    pub fn plan(&mut self, n_workers: usize) -> Result<Option<IterationPlan>> {
        if n_workers == 0 {
            return Err(Error::invalid("cannot plan an update with no workers"));
        }
        let Some(epoch) = self.next_epoch() else {
            return Ok(None);
        };
        let want = self.prep.run.batch_policy.global_batch(n_workers);
        let take = want.min(self.order.len() - self.cursor);
        let batch = Batch::new(self.order[self.cursor..self.cursor + take].to_vec())?;
        let (_, idle) = partition_batch(take, n_workers)?;
        Ok(Some(IterationPlan {
            t: self.t,
            epoch,
            iter_in_epoch: self.iter_in_epoch,
            n_workers,
            nominal_batch: want,
            slices: partition_ranges(take, n_workers)?,
            batch,
            short: take < want,
            idle_workers: idle,
            cursor: self.cursor,
        }))
    }

    /// Applies the update for `plan` from the workers' aggregate.
    pub fn commit(&mut self, plan: &IterationPlan, agg: &Aggregate) -> Result<Outcome> {
        if plan.t != self.t || plan.cursor != self.cursor || plan.epoch != self.epoch {
            return Err(Error::invalid("stale iteration plan"));
        }
        if agg.count != plan.batch.len() {
            return Err(Error::invalid(format!(
                "aggregate covers {} samples, plan has {}",
                agg.count,
                plan.batch.len()
            )));
        }
        let run = &self.prep.run;
        let model = &self.prep.model;
        let n = self.prep.data.len() as f64;
        let b = plan.batch.len();
        let start = plan.epoch as f64 + plan.cursor as f64 / n;
        let end = plan.epoch as f64 + (plan.cursor + b) as f64 / n;
        let sched = run.lr_schedule.at_progress(start, end, run.epochs);

        let decay = (model.spec().weight_decay > 0.0).then(|| {
            let mut d = ParamVector::zeros(self.w.dim());
            model.add_decay_grad(&self.w, &mut d);
            d
        });
        let mut mean = agg.grad_sum.scaled(1.0 / b as f64);
        if let Some(d) = &decay {
            mean.add_assign(d);
        }
        let loss = agg.loss_sum / b as f64 + model.decay_loss(&self.w);
        let probe_loss = match &self.probe {
            Some(p) => Some(model.loss_sum(&self.w, &self.prep.data, p.indices())? / p.len() as f64),
            None => None,
        };
        if plan.idle_workers {
            self.events.push(Event::IdleWorkers {
                iter: plan.t,
                workers: plan.n_workers,
                batch_size: b,
            });
        }

        let before = self.w.clone();
        let step = if loss.is_finite() && loss.abs() <= DIVERGENCE_LOSS {
            let input = StepInput {
                grad_sum: &agg.grad_sum,
                count: b,
                nominal_batch: plan.nominal_batch,
                decay: decay.as_ref(),
                schedule: sched,
                t: plan.t,
            };
            self.opt
                .step(&mut self.w, input)
                .map_err(|e| match e {
                    Error::NonFinite(_) => None,
                    other => Some(other),
                })
        } else {
            Err(None)
        };
        let info = match step {
            Ok(info) => info,
            Err(Some(e)) => return Err(e),
            Err(None) => {
                self.w = before;
                self.diverged = true;
                self.events.push(Event::Divergence { iter: plan.t, loss });
                return Ok(Outcome::Diverged);
            }
        };

        self.entries.push(RecordEntry {
            iter: plan.t,
            epoch: plan.epoch,
            n_workers: plan.n_workers,
            batch_size: b,
            effective_lr: info.effective_lr,
            gamma: info.gamma,
            loss,
            grad_norm: mean.norm(),
            strategy: run.optimizer.strategy.name().to_string(),
            probe_loss,
            short: plan.short,
            samples: run.metrics.record_samples.then(|| plan.batch.indices().to_vec()),
        });
        self.cursor += b;
        self.iter_in_epoch += 1;
        self.t += 1;
        Ok(Outcome::Continue)
    }

    /// Closes the run and assembles the record.
    pub fn finish(self, config: serde_json::Value) -> Result<RunRecord> {
        let run = &self.prep.run;
        let data = &self.prep.data;
        let all: Vec<usize> = (0..data.len()).collect();
        let final_loss =
            self.prep.model.loss_sum(&self.w, data, &all)? / data.len() as f64 + self.prep.model.decay_loss(&self.w);
        let min_grad_norm = self.entries.iter().map(|e| e.grad_norm).fold(f64::INFINITY, f64::min);
        Ok(RunRecord {
            header: Header {
                config,
                schedule_trace: run.schedule.trace(run.epochs),
                lr_form: run.lr_schedule.form().to_string(),
            },
            summary: Summary {
                final_loss,
                min_grad_norm,
                diverged: self.diverged,
                updates: self.t,
                events: self.events,
            },
            entries: self.entries,
        })
    }
}

/// Runs a whole training job in simulation: worker count from the schedule at
/// each epoch, gradients computed by [`data_parallel_batch`].
pub fn run_training(prep: &PreparedRun) -> Result<RunRecord> {
    run_training_with_header(prep, serde_json::to_value(&prep.run)?)
}

pub fn run_training_with_header(prep: &PreparedRun, config: serde_json::Value) -> Result<RunRecord> {
    let mut trainer = Trainer::new(prep)?;
    while let Some(epoch) = trainer.next_epoch() {
        let n = prep.run.schedule.workers_at(epoch);
        let Some(plan) = trainer.plan(n)? else { break };
        let agg = data_parallel_batch(&prep.model, &prep.data, trainer.weights(), &plan.batch, n)?;
        if trainer.commit(&plan, &agg)? == Outcome::Diverged {
            break;
        }
    }
    trainer.finish(config)
}
