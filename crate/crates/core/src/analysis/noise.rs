//! Mini-batch gradient noise measured across i.i.d. replicas.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamVector;
use crate::rng::SplitMix64;

/// Smallest replica count for an estimate that gets reported.
pub const MIN_REPORTED_REPLICAS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub batch: usize,
    /// Trace of the covariance of the batch-mean gradient.
    pub variance: f64,
    pub replicas: usize,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl NoiseEstimate {
    pub fn reportable(&self) -> bool {
        self.replicas >= MIN_REPORTED_REPLICAS
    }
}

/// Unbiased estimate of `tr Cov(∇l^B(w))` from `replicas` independent
/// batches. Streams draw fresh random indices; finite datasets draw with
/// replacement, so every batch is i.i.d. either way.
pub fn estimate_grad_variance(
    model: &Model,
    w: &ParamVector,
    data: &Dataset,
    batch: usize,
    replicas: usize,
    seed: u64,
) -> Result<NoiseEstimate> {
    if replicas < 2 {
        return Err(Error::invalid("variance estimate needs at least 2 replicas"));
    }
    if batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if data.is_empty() && !data.is_stream() {
        return Err(Error::invalid("empty dataset"));
    }
    let means: Vec<ParamVector> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = SplitMix64::derive(seed, r as u64);
            let indices: Vec<usize> = (0..batch)
                .map(|_| {
                    if data.is_stream() {
                        (rng.next() >> 2) as usize
                    } else {
                        rng.uniform_inclusive(0, data.len() as u64 - 1) as usize
                    }
                })
                .collect();
            let (_, g) = model.batch_sums(w, data, &indices)?;
            Ok(g.scaled(1.0 / batch as f64))
        })
        .collect::<Result<_>>()?;

    let r = replicas as f64;
    let mut center = ParamVector::zeros(w.dim());
    for g in &means {
        center.axpy(1.0 / r, g);
    }
    // Per-replica terms whose mean is the unbiased trace estimate.
    let terms: Vec<f64> = means.iter().map(|g| g.sub(&center).norm_sq() * r / (r - 1.0)).collect();
    let variance = terms.iter().sum::<f64>() / r;
    let spread = terms.iter().map(|t| (t - variance).powi(2)).sum::<f64>() / (r - 1.0);
    let half = 1.96 * (spread / r).sqrt();
    if !variance.is_finite() {
        return Err(Error::NonFinite("gradient variance"));
    }
    Ok(NoiseEstimate {
        batch,
        variance,
        replicas,
        ci_low: variance - half,
        ci_high: variance + half,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)`.
pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::invalid("line fit needs at least 2 points"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("line fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseScan {
    pub estimates: Vec<NoiseEstimate>,
    /// Fit of `ln variance` against `ln B`.
    pub fit: LineFit,
}

/// Estimates the variance at each batch size and fits the log-log slope.
pub fn noise_scan(
    model: &Model,
    w: &ParamVector,
    data: &Dataset,
    batches: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<NoiseScan> {
    let estimates = batches
        .iter()
        .enumerate()
        .map(|(i, &b)| estimate_grad_variance(model, w, data, b, replicas, SplitMix64::derive(seed, i as u64).next()))
        .collect::<Result<Vec<_>>>()?;
    if estimates.iter().any(|e| e.variance <= 0.0) {
        return Err(Error::invalid("log-log fit needs positive variances"));
    }
    let points: Vec<(f64, f64)> = estimates
        .iter()
        .map(|e| ((e.batch as f64).ln(), e.variance.ln()))
        .collect();
    let fit = fit_line(&points)?;
    Ok(NoiseScan { estimates, fit })
}

/// `1, 2, 4, ..., max` (powers of two up to `max`).
pub fn doubling_batches(max: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |b| b.checked_mul(2))
        .take_while(|&b| b <= max)
        .collect()
}
