use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use elastic_sgd::analysis::*;
use elastic_sgd::config::RunConfig;
use elastic_sgd::data::SyntheticKind;
use elastic_sgd::optim::Strategy;
use serde_json::{json, Value};

#[derive(Clone, Copy, ValueEnum)]
pub enum Analysis {
    /// Gradient variance against batch size.
    Noise,
    /// Momentum variance, rescale inflation and the update variance at a change.
    Momentum,
    /// Step sizes, bounds and a Monte-Carlo check of the stationarity bound.
    Theorem,
}

pub fn run(what: Analysis, cfg: &RunConfig, replicas: Option<usize>, csv: Option<&Path>) -> Result<Value> {
    match what {
        Analysis::Noise => noise(cfg, replicas.unwrap_or(200), csv),
        Analysis::Momentum => momentum(cfg, replicas.unwrap_or(1000)),
        Analysis::Theorem => theorem(cfg, replicas.unwrap_or(100), csv),
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn noise(cfg: &RunConfig, replicas: usize, csv: Option<&Path>) -> Result<Value> {
    if replicas < MIN_REPORTED_REPLICAS {
        bail!("noise estimates need at least {MIN_REPORTED_REPLICAS} replicas");
    }
    let prep = cfg.train.prepare()?;
    let w = prep.model.init_params(cfg.train.seed);
    let scan = noise_scan(&prep.model, &w, &prep.data, &doubling_batches(256), replicas, cfg.train.seed)?;
    if let Some(p) = csv {
        write_noise_csv(create(p)?, &scan.estimates)?;
    }
    let slope = scan.fit.slope;
    Ok(json!({
        "analysis": "noise",
        "estimates": scan.estimates,
        "fit": scan.fit,
        "checks": [Check::new("log-log slope", slope, "-1 ± 0.05", (slope + 1.0).abs() <= 0.05)],
    }))
}

fn momentum(cfg: &RunConfig, replicas: usize) -> Result<Value> {
    let mu = cfg.train.optimizer.momentum;
    let (lo, hi) = cfg.train.schedule.range();
    let k = ((hi as f64 / lo as f64).round() as usize).max(2);
    let steps = 200 * min_steps(mu);
    let ratio = momentum_variance_ratio(mu, steps, cfg.train.seed)?;
    let want = stationary_ratio(mu);
    let inflation = rescale_inflation(k as f64, mu, 4096, cfg.train.seed)?;
    let mut checks = vec![
        Check::new("Var(u)/Var(g)", ratio, format!("{want:.4} ± 10%"), (ratio / want - 1.0).abs() <= 0.1),
        Check::new(
            "rescale inflation",
            inflation.ratio,
            format!("{} ± 10%", k * k),
            (inflation.ratio / (k * k) as f64 - 1.0).abs() <= 0.1,
        ),
    ];
    let mut changes = Vec::new();
    for strategy in [Strategy::LinearScaling, Strategy::DynamicSgd, Strategy::Decoupled] {
        let mut c = ChangeVarianceConfig::new(strategy, k, replicas, cfg.train.seed);
        c.momentum = mu;
        let rep = update_variance_around_change(&c)?;
        if strategy == Strategy::DynamicSgd {
            checks.push(Check::new("dynamic_sgd first post-change ratio", rep.first_ratio, "< 2", rep.first_ratio < 2.0));
        }
        changes.push(json!({
            "strategy": strategy.name(),
            "pre_variance": rep.pre_variance,
            "first_ratio": rep.first_ratio,
            "predicted_first_ratio": predicted_first_ratio(strategy, k as f64, mu),
            "settled_variance": rep.settled_variance,
            "overshoot": rep.overshoot,
        }));
    }
    Ok(json!({
        "analysis": "momentum",
        "momentum": mu,
        "k": k,
        "variance_ratio": ratio,
        "stationary_ratio": want,
        "inflation": inflation,
        "changes": changes,
        "checks": checks,
    }))
}

fn theorem(cfg: &RunConfig, seeds: usize, csv: Option<&Path>) -> Result<Value> {
    let prep = cfg.train.prepare()?;
    let Some(curv) = prep.model.curvature() else {
        bail!("theorem analysis needs a quadratic model");
    };
    let sigma1_sq = match &cfg.train.dataset.kind {
        SyntheticKind::NoisyQuadratic { sigma2, .. } if *sigma2 > 0.0 => *sigma2,
        _ => bail!("theorem analysis needs a noisy_quadratic dataset with sigma2 > 0"),
    };
    let k_max = cfg.max_workers() as f64;
    let w0 = prep.model.init_params(cfg.train.seed);
    let betas = [0.0, 0.5, 1.0, 2.0];
    let base = TheoremConstants::for_quadratic(curv, &w0, sigma1_sq, k_max, 1.0)?;
    let reference = admissible_trace(&base, 256, cfg.train.seed)?;
    let rows: Vec<BoundRow> = betas
        .iter()
        .map(|&beta| Ok(BoundRow { beta, bound: theorem1_bound(&base, &reference, beta)? }))
        .collect::<elastic_sgd::Result<_>>()?;
    if let Some(p) = csv {
        write_bound_csv(create(p)?, &rows)?;
    }
    let tight = theorem1_bound(&base, &reference, 1.0)?;
    let mut checks = vec![Check::new(
        "bound(β=1) is the smallest",
        tight,
        "<= bound(β) for every β",
        rows.iter().all(|r| tight <= r.bound * (1.0 + 1e-12)),
    )];
    let mut runs = Vec::new();
    for beta in betas {
        let c = base.with_beta(beta);
        let trace = admissible_trace(&c, 256, cfg.train.seed)?;
        let rep = verify_theorem1(curv, &w0, &c, &trace, seeds, cfg.train.seed)?;
        checks.push(Check::new(
            format!("min E‖∇L‖² <= bound at β={beta}"),
            rep.min_mean_grad_sq,
            format!("<= {:.6}", rep.bound),
            rep.holds,
        ));
        runs.push(json!({"beta": beta, "steps": trace.len(), "report": rep}));
    }
    Ok(json!({
        "analysis": "theorem",
        "constants": base,
        "t0": base.t0(),
        "c1": base.c1(),
        "c2": base.c2(),
        "cauchy_bound": cauchy_bound(&base, &reference)?,
        "bounds": rows,
        "runs": runs,
        "checks": checks,
    }))
}
