use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Batch, Model};
use crate::params::ParamVector;

/// How the global batch follows the worker count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum BatchPolicy {
    /// Global batch fixed, redistributed over the current workers.
    FixedTotal(usize),
    /// Per-worker batch fixed, global batch `S·n_t`.
    FixedPerWorker(usize),
}

impl BatchPolicy {
    pub fn global_batch(&self, workers: usize) -> usize {
        match *self {
            BatchPolicy::FixedTotal(b) => b,
            BatchPolicy::FixedPerWorker(s) => s * workers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BatchPolicy::FixedTotal(0) | BatchPolicy::FixedPerWorker(0) => {
                Err(Error::invalid("batch policy value must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Local batch sizes for `workers` over a batch of `batch` samples: the first
/// `batch mod workers` get one extra sample. Returns `true` alongside when
/// some workers are left idle.
pub fn partition_batch(batch: usize, workers: usize) -> Result<(Vec<usize>, bool)> {
    if batch == 0 || workers == 0 {
        return Err(Error::invalid("partition needs batch >= 1 and workers >= 1"));
    }
    let (q, r) = (batch / workers, batch % workers);
    let sizes = (0..workers).map(|i| q + usize::from(i < r)).collect();
    Ok((sizes, workers > batch))
}

/// Contiguous index ranges into a batch of `batch` samples, one per worker.
pub fn partition_ranges(batch: usize, workers: usize) -> Result<Vec<Range<usize>>> {
    let (sizes, _) = partition_batch(batch, workers)?;
    let mut start = 0;
    Ok(sizes
        .into_iter()
        .map(|s| {
            let r = start..start + s;
            start += s;
            r
        })
        .collect())
}

/// Unnormalized loss and gradient sums over some set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub loss_sum: f64,
    pub grad_sum: ParamVector,
    pub count: usize,
}

impl Aggregate {
    pub fn zeros(dim: usize) -> Self {
        Self {
            loss_sum: 0.0,
            grad_sum: ParamVector::zeros(dim),
            count: 0,
        }
    }

    /// Sums contributions in the order given, which callers keep ascending by
    /// worker id.
    pub fn reduce<'a>(dim: usize, parts: impl IntoIterator<Item = &'a Aggregate>) -> Self {
        let mut acc = Self::zeros(dim);
        for p in parts {
            acc.loss_sum += p.loss_sum;
            acc.grad_sum.add_assign(&p.grad_sum);
            acc.count += p.count;
        }
        acc
    }
}

/// One worker's contribution: sums over its slice in ascending index order.
pub fn worker_sums(model: &Model, data: &Dataset, w: &ParamVector, samples: &[usize]) -> Result<Aggregate> {
    let (loss_sum, grad_sum) = model.batch_sums(w, data, samples)?;
    Ok(Aggregate {
        loss_sum,
        grad_sum,
        count: samples.len(),
    })
}

/// Synchronous data-parallel gradient of one mini-batch: partition into
/// `workers` slices, compute each (concurrently for large batches), and
/// allreduce in ascending worker order. The result is the unnormalized sum.
pub fn data_parallel_batch(
    model: &Model,
    data: &Dataset,
    w: &ParamVector,
    batch: &Batch,
    workers: usize,
) -> Result<Aggregate> {
    let ranges = partition_ranges(batch.len(), workers)?;
    let idx = batch.indices();
    let compute = |r: &Range<usize>| worker_sums(model, data, w, &idx[r.clone()]);
    let parts: Vec<Aggregate> = if batch.len() >= 512 && workers > 1 {
        ranges.par_iter().map(compute).collect::<Result<_>>()?
    } else {
        ranges.iter().map(compute).collect::<Result<_>>()?
    };
    Ok(Aggregate::reduce(w.dim(), &parts))
}

/// Gradient of a large batch simulated by accumulating base batches: the
/// sample-weighted mean of the base-batch mean gradients (weight decay not
/// included). With equal-size batches this is the plain mean of the `k`
/// gradients and equals the gradient of the concatenated batch.
pub fn accumulate_large_batch(model: &Model, data: &Dataset, w: &ParamVector, base_batches: &[Batch]) -> Result<ParamVector> {
    if base_batches.is_empty() {
        return Err(Error::invalid("need at least one base batch"));
    }
    let mut acc = ParamVector::zeros(w.dim());
    let mut total = 0usize;
    for b in base_batches {
        let (_, g) = model.batch_sums(w, data, b.indices())?;
        acc.add_assign(&g);
        total += b.len();
    }
    acc.scale(1.0 / total as f64);
    acc.finite("accumulated gradient")
}
