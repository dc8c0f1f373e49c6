//! Monte-Carlo and closed-form checks of the optimization theory. The noise
//! side covers batch scaling, momentum amplification and the update variance
//! across a batch change. The step-size side covers the optimal convex
//! learning rate and a stationarity bound under varying machine counts.
//!
//! Replicas run in parallel but are always aggregated in replica order, so
//! every report is a pure function of its seed.

mod convex;
mod momentum;
mod noise;
mod theorem;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use convex::{optimal_lr_convex, GradSignal, OptimalLr};
pub use momentum::{
    min_steps, momentum_variance_ratio, predicted_first_ratio, rescale_inflation, stationary_ratio,
    update_variance_around_change, ChangeVarianceConfig, ChangeVarianceReport, InflationReport,
};
pub use noise::{
    doubling_batches, estimate_grad_variance, fit_line, noise_scan, LineFit, NoiseEstimate, NoiseScan,
    MIN_REPORTED_REPLICAS,
};
pub use theorem::{
    admissible_trace, cauchy_bound, proof_terms, random_trace, theorem1_bound, theorem1_step_sizes, verify_theorem1, StepSizes,
    TheoremConstants, TheoremReport,
};

/// One named pass/fail line of an analysis report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: String,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, target: impl Into<String>, pass: bool) -> Self {
        Self {
            name: name.into(),
            value,
            target: target.into(),
            pass,
        }
    }
}

/// `(B, variance)` rows with confidence bounds.
pub fn write_noise_csv<W: Write>(out: W, estimates: &[NoiseEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in estimates {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub beta: f64,
    pub bound: f64,
}

/// `(β, bound)` rows.
pub fn write_bound_csv<W: Write>(out: W, rows: &[BoundRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
