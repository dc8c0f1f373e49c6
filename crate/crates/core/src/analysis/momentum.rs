//! Variance of momentum buffers under i.i.d. gradient noise, and of the
//! update right after a batch-size change.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_synthetic, SyntheticKind};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};
use crate::optim::{linear_scaling_rescale, ramp_len, Optimizer, OptimizerConfig, StepInput, Strategy};
use crate::params::ParamVector;
use crate::rng::SplitMix64;

const LANES: usize = 64;

/// `1/(1−μ²)`, the stationary `Var(u)/Var(g)` of `u ← μu + g`.
pub fn stationary_ratio(mu: f64) -> f64 {
    1.0 / (1.0 - mu * mu)
}

/// Fewest steps accepted by [`momentum_variance_ratio`].
pub fn min_steps(mu: f64) -> usize {
    (50.0 / (1.0 - mu)).ceil() as usize
}

fn check_mu(mu: f64) -> Result<()> {
    if !(0.0..1.0).contains(&mu) {
        return Err(Error::invalid("momentum must be in [0, 1)"));
    }
    Ok(())
}

/// Running mean and variance.
#[derive(Debug, Default, Clone, Copy)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        self.m2 / (self.n - 1.0)
    }
}

/// Empirical `Var(u)/Var(g)` of 64 independent buffers `u ← μu + g` driven
/// by standard normal noise, measured after a burn-in of `⌈10/(1−μ)⌉`.
pub fn momentum_variance_ratio(mu: f64, steps: usize, seed: u64) -> Result<f64> {
    check_mu(mu)?;
    if steps < min_steps(mu) {
        return Err(Error::invalid(format!(
            "need at least {} steps for momentum {mu}",
            min_steps(mu)
        )));
    }
    let burn = (10.0 / (1.0 - mu)).ceil() as usize;
    let mut rng = SplitMix64::new(seed);
    let mut u = [0.0; LANES];
    let mut gs = Welford::default();
    let mut us = Welford::default();
    for t in 0..burn + steps {
        for lane in u.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *lane = mu * *lane + g;
            if t >= burn {
                gs.push(g);
                us.push(*lane);
            }
        }
    }
    Ok(us.variance() / gs.variance())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationReport {
    pub k: f64,
    pub variance_before: f64,
    pub variance_after: f64,
    pub ratio: f64,
}

/// Drives a population of scalar `v` buffers to stationarity, applies the
/// linear-scaling rescale by `k` and reports the population variance ratio.
pub fn rescale_inflation(k: f64, mu: f64, population: usize, seed: u64) -> Result<InflationReport> {
    check_mu(mu)?;
    if !(k > 0.0 && k.is_finite()) || population < 2 {
        return Err(Error::invalid("need k > 0 and a population of at least 2"));
    }
    let lr = 0.1;
    let burn = (20.0 / (1.0 - mu)).ceil() as usize;
    let mut rng = SplitMix64::new(seed);
    let mut v = vec![0.0; population];
    for _ in 0..burn {
        for x in v.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *x = mu * *x + lr * g;
        }
    }
    let before = ParamVector::new(v);
    let after = linear_scaling_rescale(&before, k)?;
    let var = |p: &ParamVector| {
        let mut w = Welford::default();
        p.as_slice().iter().for_each(|&x| w.push(x));
        w.variance()
    };
    let (variance_before, variance_after) = (var(&before), var(&after));
    Ok(InflationReport {
        k,
        variance_before,
        variance_after,
        ratio: variance_after / variance_before,
    })
}

/// A batch-size change on the noisy quadratic, replayed over many replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeVarianceConfig {
    pub strategy: Strategy,
    /// Batch ratio at the change.
    pub k: usize,
    pub base_batch: usize,
    pub momentum: f64,
    pub lr: f64,
    pub dim: usize,
    /// Per-sample noise variance (trace).
    pub sigma2: f64,
    /// Curvature of every direction. Small values keep the update noise-driven.
    pub curvature: f64,
    pub replicas: usize,
    /// Steps before the change; the default reaches stationarity.
    pub pre_steps: Option<usize>,
    /// Steps after the change; the default covers any ramp and a settling tail.
    pub post_steps: Option<usize>,
    pub seed: u64,
}

impl ChangeVarianceConfig {
    pub fn new(strategy: Strategy, k: usize, replicas: usize, seed: u64) -> Self {
        Self {
            strategy,
            k,
            base_batch: 8,
            momentum: 0.9,
            lr: 0.01,
            dim: 8,
            sigma2: 1.0,
            curvature: 1e-3,
            replicas,
            pre_steps: None,
            post_steps: None,
            seed,
        }
    }

    fn steps(&self) -> (usize, usize) {
        let settle = (20.0 / (1.0 - self.momentum)).ceil() as usize;
        let pre = self.pre_steps.unwrap_or(settle);
        let ramp = ramp_len(8.0, self.k as f64) as usize;
        (pre, self.post_steps.unwrap_or(ramp + settle))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeVarianceReport {
    pub strategy: Strategy,
    pub k: usize,
    /// Update variance (trace) on the last step before the change.
    pub pre_variance: f64,
    /// First post-change update variance over `pre_variance`.
    pub first_ratio: f64,
    /// Update variance of every post-change step.
    pub post_variances: Vec<f64>,
    /// Mean over the last tenth of the post-change steps.
    pub settled_variance: f64,
    /// Largest post-change variance over the settled level.
    pub overshoot: f64,
}

/// Runs the real optimizer through a `B → kB` change on independent noise
/// streams and measures the variance of the update `w_{t+1} − w_t` across
/// replicas at every step.
pub fn update_variance_around_change(cfg: &ChangeVarianceConfig) -> Result<ChangeVarianceReport> {
    check_mu(cfg.momentum)?;
    if cfg.replicas < 2 || cfg.k == 0 || cfg.base_batch == 0 || cfg.dim == 0 {
        return Err(Error::invalid("need replicas >= 2 and positive k, base_batch, dim"));
    }
    let (pre, post) = cfg.steps();
    if pre == 0 || post == 0 {
        return Err(Error::invalid("need at least one step on each side of the change"));
    }
    let model = ModelSpec::new(ModelKind::Quadratic {
        eigenvalues: vec![cfg.curvature; cfg.dim],
        rotation_seed: None,
    })
    .build()?;
    let data = make_synthetic(&SyntheticKind::noisy_quadratic(cfg.dim, cfg.sigma2), 1, cfg.seed)?;
    let opt_cfg = OptimizerConfig::new(cfg.strategy, cfg.lr, cfg.momentum, cfg.base_batch);
    let big = cfg.k * cfg.base_batch;
    let stride = pre * cfg.base_batch + post * big;
    let steps = pre + post;

    let deltas: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let mut opt = Optimizer::new(opt_cfg.clone(), cfg.dim)?;
            let mut w = ParamVector::zeros(cfg.dim);
            let mut next = r * stride;
            let mut out = Vec::with_capacity(steps * cfg.dim);
            for t in 0..steps {
                let b = if t < pre { cfg.base_batch } else { big };
                let idx: Vec<usize> = (next..next + b).collect();
                next += b;
                let (_, g) = model.batch_sums(&w, &data, &idx)?;
                let before = w.clone();
                opt.step(&mut w, StepInput::new(&g, b, 1.0, t as u64))?;
                out.extend(w.sub(&before).into_inner());
            }
            if !w.is_finite() {
                return Err(Error::NonFinite("change-variance replica"));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let n = cfg.replicas as f64;
    let variance_at = |t: usize| -> f64 {
        (0..cfg.dim)
            .map(|c| {
                let i = t * cfg.dim + c;
                let mean = deltas.iter().map(|d| d[i]).sum::<f64>() / n;
                deltas.iter().map(|d| (d[i] - mean).powi(2)).sum::<f64>() / (n - 1.0)
            })
            .sum()
    };
    let pre_variance = variance_at(pre - 1);
    let post_variances: Vec<f64> = (pre..steps).map(variance_at).collect();
    let tail = post.div_ceil(10);
    let settled_variance = post_variances[post - tail..].iter().sum::<f64>() / tail as f64;
    let peak = post_variances.iter().copied().fold(0.0, f64::max);
    Ok(ChangeVarianceReport {
        strategy: cfg.strategy,
        k: cfg.k,
        pre_variance,
        first_ratio: post_variances[0] / pre_variance,
        post_variances,
        settled_variance,
        overshoot: peak / settled_variance,
    })
}

/// First post-change update-variance ratio for pure noise at stationarity.
pub fn predicted_first_ratio(strategy: Strategy, k: f64, mu: f64) -> f64 {
    let m2 = mu * mu;
    match strategy {
        // v ← k·v, then v' = μv + kη·ḡ_{kB}
        Strategy::LinearScaling => m2 * k * k + k * (1.0 - m2),
        // γ is still 1 on the first step: only the fresh gradient is quieter.
        Strategy::DynamicSgd | Strategy::MomentumSgd => m2 + (1.0 - m2) / k,
        // The drive is a sum over kB samples at a fixed step size.
        Strategy::Decoupled => m2 + k * (1.0 - m2),
        Strategy::PlainSgd => 1.0 / k,
    }
}
