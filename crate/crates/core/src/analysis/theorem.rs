//! Step sizes and the stationarity bound for SGD under a varying number of
//! machines `k_t`, plus a Monte-Carlo check on a quadratic.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Curvature;
use crate::params::ParamVector;
use crate::rng::SplitMix64;

/// Problem constants. Derived values are computed on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    /// Smoothness bound.
    pub c: f64,
    /// Initial suboptimality `L(w_0) − L*`.
    pub l_delta: f64,
    /// Per-machine gradient noise.
    pub sigma1_sq: f64,
    /// Largest machine count.
    pub k_max: f64,
    pub beta: f64,
}

impl TheoremConstants {
    pub fn new(c: f64, l_delta: f64, sigma1_sq: f64, k_max: f64, beta: f64) -> Result<Self> {
        let out = Self {
            c,
            l_delta,
            sigma1_sq,
            k_max,
            beta,
        };
        out.validate()?;
        Ok(out)
    }

    /// Constants for `½wᵀAw` started at `w0`, with `C = λ_max` and `L* = 0`.
    pub fn for_quadratic(curv: &Curvature, w0: &ParamVector, sigma1_sq: f64, k_max: f64, beta: f64) -> Result<Self> {
        w0.check_dim(curv.dim())?;
        Self::new(curv.lambda_max(), curv.objective(w0.as_slice()), sigma1_sq, k_max, beta)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("C", self.c),
            ("L_Δ", self.l_delta),
            ("σ1²", self.sigma1_sq),
            ("K", self.k_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.k_max < 1.0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if !self.beta.is_finite() {
            return Err(Error::invalid("β must be finite"));
        }
        Ok(())
    }

    pub fn t0(&self) -> f64 {
        2.0 * self.c * self.k_max * self.l_delta / self.sigma1_sq
    }

    pub fn c1(&self) -> f64 {
        (2.0 * self.l_delta / (self.c * self.sigma1_sq)).sqrt()
    }

    pub fn c2(&self) -> f64 {
        (2.0 * self.c * self.sigma1_sq * self.l_delta).sqrt()
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }
}

fn check_trace(constants: &TheoremConstants, trace: &[f64]) -> Result<()> {
    constants.validate()?;
    if trace.is_empty() {
        return Err(Error::invalid("empty machine trace"));
    }
    if trace.iter().any(|&k| !(1.0..=constants.k_max).contains(&k)) {
        return Err(Error::invalid("machine counts must lie in [1, K]"));
    }
    Ok(())
}

fn power_sum(trace: &[f64], p: f64) -> f64 {
    trace.iter().map(|k| k.powf(p)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub etas: Vec<f64>,
    /// `C1 / √Σ k^{2β−1}`, so that `η_t = η_0·k_t^β`.
    pub eta0: f64,
    /// `T ≤ T0`: too few steps for the bound to be guaranteed.
    pub below_t0: bool,
    /// Every step satisfies `η_t ≤ 1/C`.
    pub within_smoothness: bool,
}

pub fn theorem1_step_sizes(constants: &TheoremConstants, trace: &[f64]) -> Result<StepSizes> {
    check_trace(constants, trace)?;
    let beta = constants.beta;
    let eta0 = constants.c1() / power_sum(trace, 2.0 * beta - 1.0).sqrt();
    let etas: Vec<f64> = trace.iter().map(|k| eta0 * k.powf(beta)).collect();
    let max_eta = etas.iter().copied().fold(0.0, f64::max);
    Ok(StepSizes {
        eta0,
        below_t0: trace.len() as f64 <= constants.t0(),
        within_smoothness: max_eta <= 1.0 / constants.c,
        etas,
    })
}

/// `C2·√(Σ k^{2β−1}) / Σ k^β`
pub fn theorem1_bound(constants: &TheoremConstants, trace: &[f64], beta: f64) -> Result<f64> {
    check_trace(constants, trace)?;
    Ok(constants.c2() * power_sum(trace, 2.0 * beta - 1.0).sqrt() / power_sum(trace, beta))
}

/// `C2 / √Σ k`, the β-independent floor of [`theorem1_bound`].
pub fn cauchy_bound(constants: &TheoremConstants, trace: &[f64]) -> Result<f64> {
    check_trace(constants, trace)?;
    Ok(constants.c2() / power_sum(trace, 1.0).sqrt())
}

/// The two terms of the bound for a free `η_0`:
/// `L_Δ/(η_0 Σk^β)` and `(Cσ1²/2)·η_0·Σk^{2β−1}/Σk^β`.
pub fn proof_terms(constants: &TheoremConstants, trace: &[f64], eta0: f64) -> Result<(f64, f64)> {
    check_trace(constants, trace)?;
    if !(eta0 > 0.0 && eta0.is_finite()) {
        return Err(Error::invalid("η_0 must be positive"));
    }
    let b = constants.beta;
    let denom = power_sum(trace, b);
    let first = constants.l_delta / (eta0 * denom);
    let second = 0.5 * constants.c * constants.sigma1_sq * eta0 * power_sum(trace, 2.0 * b - 1.0) / denom;
    Ok((first, second))
}

/// Uniform integer machine counts in `[1, k_max]`.
pub fn random_trace(len: usize, k_max: u64, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..len).map(|_| rng.uniform_inclusive(1, k_max.max(1)) as f64).collect()
}

/// A random trace at least `min_len` long, doubled until the theorem's
/// premises hold: `T > T0` and every step within `1/C`.
pub fn admissible_trace(constants: &TheoremConstants, min_len: usize, seed: u64) -> Result<Vec<f64>> {
    constants.validate()?;
    let k_max = constants.k_max.floor() as u64;
    let mut len = min_len.max(1);
    loop {
        let trace = random_trace(len, k_max, seed);
        let s = theorem1_step_sizes(constants, &trace)?;
        if !s.below_t0 && s.within_smoothness {
            return Ok(trace);
        }
        len = len
            .checked_mul(2)
            .filter(|&l| l <= 1 << 24)
            .ok_or_else(|| Error::invalid("no admissible trace length below 2^24"))?;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub bound: f64,
    pub eta0: f64,
    pub seeds: usize,
    /// `min_t` of the seed-averaged `‖∇L(w_t)‖²`.
    pub min_mean_grad_sq: f64,
    /// Iteration attaining it.
    pub argmin: usize,
    /// Seed average of each run's own minimum.
    pub mean_run_min: f64,
    pub below_t0: bool,
    pub within_smoothness: bool,
    pub holds: bool,
}

/// Runs SGD without momentum on `½wᵀAw` from `w0` with the theorem's step
/// sizes. Step `t` sees the exact gradient plus isotropic noise of trace
/// `σ1²/k_t`. Gradient norms are recorded at `w_0 .. w_{T−1}`.
pub fn verify_theorem1(
    curv: &Curvature,
    w0: &ParamVector,
    constants: &TheoremConstants,
    trace: &[f64],
    seeds: usize,
    seed: u64,
) -> Result<TheoremReport> {
    w0.check_dim(curv.dim())?;
    if seeds == 0 {
        return Err(Error::invalid("need at least one seed"));
    }
    let steps = theorem1_step_sizes(constants, trace)?;
    let bound = theorem1_bound(constants, trace, constants.beta)?;
    let d = curv.dim();
    let runs: Vec<Vec<f64>> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let mut rng = SplitMix64::derive(seed, s as u64);
            let mut w = w0.as_slice().to_vec();
            let mut norms = Vec::with_capacity(trace.len());
            for (&k, &eta) in trace.iter().zip(&steps.etas) {
                let grad = curv.apply(&w);
                norms.push(grad.iter().map(|g| g * g).sum::<f64>());
                let scale = (constants.sigma1_sq / (k * d as f64)).sqrt();
                for (x, g) in w.iter_mut().zip(&grad) {
                    let noise: f64 = rng.sample(StandardNormal);
                    *x -= eta * (g + scale * noise);
                }
                if w.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("theorem iterate"));
                }
            }
            Ok(norms)
        })
        .collect::<Result<_>>()?;
    let n = seeds as f64;
    let (argmin, min_mean_grad_sq) = (0..trace.len())
        .map(|t| (t, runs.iter().map(|r| r[t]).sum::<f64>() / n))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let mean_run_min = runs
        .iter()
        .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / n;
    Ok(TheoremReport {
        bound,
        eta0: steps.eta0,
        seeds,
        min_mean_grad_sq,
        argmin,
        mean_run_min,
        below_t0: steps.below_t0,
        within_smoothness: steps.within_smoothness,
        holds: min_mean_grad_sq <= bound,
    })
}
