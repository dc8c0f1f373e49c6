//! Side-by-side comparison of run records.
//!
//! The spike magnitude of a run is the largest ratio, over all worker-count
//! changes, between the maximum tracked loss in the window after the change
//! and the median tracked loss over the window before it. The post-change
//! window is the compensation ramp length `⌈8k⌉` for a batch ratio `k`
//! (for decreases, `⌈8/k⌉`); the trailing window is at least 32 updates.

use serde::{Deserialize, Serialize};

use crate::engine::{RecordEntry, RunRecord};
use crate::error::{Error, Result};
use crate::optim::ramp_len;

pub const MIN_TRAILING: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSpike {
    /// Index of the first update after the change.
    pub iter: u64,
    pub from_workers: usize,
    pub to_workers: usize,
    pub trailing_median: f64,
    pub window_max: f64,
    pub magnitude: f64,
}

/// Spike magnitude at every worker-count change in `entries`.
pub fn change_spikes(entries: &[RecordEntry]) -> Vec<ChangeSpike> {
    let mut out = Vec::new();
    for i in 1..entries.len() {
        let (prev, cur) = (&entries[i - 1], &entries[i]);
        if prev.n_workers == cur.n_workers {
            continue;
        }
        let k = cur.n_workers as f64 / prev.n_workers as f64;
        let window = ramp_len(8.0, k.max(1.0 / k)) as usize;
        let trailing = window.max(MIN_TRAILING).min(i);
        let median = median(entries[i - trailing..i].iter().map(RecordEntry::tracked_loss).collect());
        let window_max = entries[i..(i + window).min(entries.len())]
            .iter()
            .map(RecordEntry::tracked_loss)
            .fold(f64::NEG_INFINITY, f64::max);
        out.push(ChangeSpike {
            iter: cur.iter,
            from_workers: prev.n_workers,
            to_workers: cur.n_workers,
            trailing_median: median,
            window_max,
            magnitude: window_max / median,
        });
    }
    out
}

/// Largest spike magnitude of a run; 0 when the worker count never changes.
pub fn spike_magnitude(entries: &[RecordEntry]) -> f64 {
    change_spikes(entries).iter().map(|s| s.magnitude).fold(0.0, f64::max)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub final_loss: f64,
    pub min_grad_norm: f64,
    pub spike_magnitude: f64,
    pub diverged: bool,
    /// `final_loss` minus the first record's.
    pub final_loss_delta: f64,
    pub spike_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<16} {:>12} {:>14} {:>10} {:>9}\n",
            "strategy", "final_loss", "min_grad_norm", "spike", "diverged"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<16} {:>12.6} {:>14.6} {:>10.4} {:>9}\n",
                r.strategy, r.final_loss, r.min_grad_norm, r.spike_magnitude, r.diverged
            ));
        }
        s
    }
}

fn shared_key(rec: &RunRecord) -> [Option<&serde_json::Value>; 3] {
    let c = &rec.header.config;
    [c.get("model"), c.get("dataset"), c.get("seed")]
}

pub fn compare(records: &[RunRecord]) -> Result<ComparisonReport> {
    let first = records.first().ok_or_else(|| Error::invalid("nothing to compare"))?;
    if records.iter().any(|r| shared_key(r) != shared_key(first)) {
        return Err(Error::invalid("records differ in model, dataset or seed"));
    }
    let base_spike = spike_magnitude(&first.entries);
    let rows = records
        .iter()
        .map(|r| {
            let spike = spike_magnitude(&r.entries);
            ComparisonRow {
                strategy: r.entries.first().map(|e| e.strategy.clone()).unwrap_or_default(),
                final_loss: r.summary.final_loss,
                min_grad_norm: r.summary.min_grad_norm,
                spike_magnitude: spike,
                diverged: r.summary.diverged,
                final_loss_delta: r.summary.final_loss - first.summary.final_loss,
                spike_delta: spike - base_spike,
            }
        })
        .collect();
    Ok(ComparisonReport { rows })
}
