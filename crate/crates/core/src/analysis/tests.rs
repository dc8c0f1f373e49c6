use super::*;
use crate::data::{make_synthetic, SyntheticKind};
use crate::model::{Curvature, ModelKind, ModelSpec};
use crate::optim::Strategy;
use crate::params::ParamVector;

fn noisy_quadratic(dim: usize, sigma2: f64) -> (crate::model::Model, crate::data::Dataset, ParamVector) {
    let model = ModelSpec::new(ModelKind::Quadratic {
        eigenvalues: vec![1.0; dim],
        rotation_seed: None,
    })
    .build()
    .unwrap();
    let data = make_synthetic(&SyntheticKind::noisy_quadratic(dim, sigma2), 1, 7).unwrap();
    let w = model.init_params(0);
    (model, data, w)
}

#[test]
fn variance_follows_sigma_over_batch() {
    let (model, data, w) = noisy_quadratic(16, 4.0);
    let e = estimate_grad_variance(&model, &w, &data, 16, 400, 1).unwrap();
    assert!((e.variance - 0.25).abs() < 0.02, "{e:?}");
    assert!(e.ci_low < 0.25 && 0.25 < e.ci_high, "{e:?}");
    let one = estimate_grad_variance(&model, &w, &data, 1, 400, 2).unwrap();
    assert!((one.variance / 4.0 - 1.0).abs() < 0.05, "{one:?}");
}

#[test]
fn variance_needs_two_replicas() {
    let (model, data, w) = noisy_quadratic(4, 1.0);
    assert!(estimate_grad_variance(&model, &w, &data, 4, 1, 0).is_err());
    assert!(estimate_grad_variance(&model, &w, &data, 0, 8, 0).is_err());
}

#[test]
fn finite_tables_draw_with_replacement() {
    let model = ModelSpec::new(ModelKind::LogisticRegression { input_dim: 2 }).build().unwrap();
    let data = make_synthetic(&SyntheticKind::blobs(), 64, 3).unwrap();
    let w = ParamVector::new(vec![0.3, -0.2, 0.1]);
    let small = estimate_grad_variance(&model, &w, &data, 2, 300, 4).unwrap();
    let large = estimate_grad_variance(&model, &w, &data, 8, 300, 4).unwrap();
    let ratio = small.variance / large.variance;
    assert!((3.0..5.3).contains(&ratio), "{ratio}");
}

#[test]
fn log_log_slope_is_minus_one() {
    let (model, data, w) = noisy_quadratic(16, 1.0);
    let scan = noise_scan(&model, &w, &data, &doubling_batches(256), 200, 5).unwrap();
    assert_eq!(scan.estimates.len(), 9);
    assert!((scan.fit.slope + 1.0).abs() < 0.05, "{:?}", scan.fit);
}

#[test]
fn line_fit_is_exact_on_a_line() {
    let fit = fit_line(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
    assert!((fit.slope - 2.0).abs() < 1e-12 && (fit.intercept - 1.0).abs() < 1e-12);
    assert!(fit_line(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
}

#[test]
fn momentum_ratio_matches_stationary_law() {
    assert!((momentum_variance_ratio(0.0, 2000, 1).unwrap() - 1.0).abs() < 0.02);
    for mu in [0.5, 0.9] {
        let r = momentum_variance_ratio(mu, 20 * min_steps(mu), 2).unwrap();
        assert!((r / stationary_ratio(mu) - 1.0).abs() < 0.1, "{mu}: {r}");
    }
    assert!(momentum_variance_ratio(1.0, 10_000, 0).is_err());
    assert!(momentum_variance_ratio(0.9, 100, 0).is_err());
}

#[test]
fn rescale_multiplies_variance_by_k_squared() {
    for k in [2.0, 4.0, 12.0] {
        let r = rescale_inflation(k, 0.9, 4096, 3).unwrap();
        assert!((r.ratio / (k * k) - 1.0).abs() < 0.1, "{r:?}");
    }
}

#[test]
fn first_update_variance_after_change() {
    for strategy in [Strategy::LinearScaling, Strategy::DynamicSgd, Strategy::Decoupled] {
        let cfg = ChangeVarianceConfig::new(strategy, 12, 1000, 9);
        let rep = update_variance_around_change(&cfg).unwrap();
        let want = predicted_first_ratio(strategy, 12.0, 0.9);
        assert!((rep.first_ratio / want - 1.0).abs() < 0.15, "{strategy:?}: {} vs {want}", rep.first_ratio);
    }
}

#[test]
fn dynamic_sgd_does_not_overshoot() {
    let ds = update_variance_around_change(&ChangeVarianceConfig::new(Strategy::DynamicSgd, 12, 1000, 4)).unwrap();
    let ls = update_variance_around_change(&ChangeVarianceConfig::new(Strategy::LinearScaling, 12, 1000, 4)).unwrap();
    assert!(ds.first_ratio < 2.0, "{}", ds.first_ratio);
    assert!(ds.overshoot < 1.3, "{}", ds.overshoot);
    assert!(ls.overshoot > 5.0, "{}", ls.overshoot);
}

#[test]
fn optimal_lr_worked_values() {
    let g = GradSignal::new(1.0).unwrap();
    let one = optimal_lr_convex(g, 1.0, 100.0, 1.0).unwrap();
    assert!((one.exact - 1.0 / 101.0).abs() < 1e-12);
    let ten = optimal_lr_convex(g, 1.0, 100.0, 10.0).unwrap();
    assert!((ten.exact - 10.0 / 110.0).abs() < 1e-12);
    assert!((ten.approx - 0.1).abs() < 1e-12);
    assert!(optimal_lr_convex(g, 0.0, 1.0, 1.0).is_err());
    assert!(GradSignal::new(-1.0).is_err());
}

#[test]
fn step_sizes_worked_values() {
    let c = TheoremConstants::new(1.0, 0.5, 1.0, 4.0, 1.0).unwrap();
    assert!((c.c1() - 1.0).abs() < 1e-15 && (c.c2() - 1.0).abs() < 1e-15);
    let trace = vec![4.0; 100];
    let s = theorem1_step_sizes(&c, &trace).unwrap();
    assert!(s.etas.iter().all(|e| (e - 0.2).abs() < 1e-12));
    assert!((theorem1_bound(&c, &trace, 1.0).unwrap() - 0.05).abs() < 1e-12);

    let ones = vec![1.0; 64];
    for beta in [0.0, 0.7, 3.0] {
        let s = theorem1_step_sizes(&c.with_beta(beta), &ones).unwrap();
        assert!(s.etas.iter().all(|e| (e - 1.0 / 8.0).abs() < 1e-12));
    }
    let mixed = [1.0, 2.0, 4.0, 3.0];
    let s = theorem1_step_sizes(&c.with_beta(0.0), &mixed).unwrap();
    let want = 1.0 / mixed.iter().map(|k| 1.0 / k).sum::<f64>().sqrt();
    assert!(s.etas.iter().all(|e| (e - want).abs() < 1e-12));
    assert!(s.below_t0);
}

#[test]
fn trace_is_validated() {
    let c = TheoremConstants::new(1.0, 0.5, 1.0, 4.0, 1.0).unwrap();
    assert!(theorem1_bound(&c, &[], 1.0).is_err());
    assert!(theorem1_step_sizes(&c, &[5.0]).is_err());
    assert!(TheoremConstants::new(0.0, 0.5, 1.0, 4.0, 1.0).is_err());
}

#[test]
fn optimal_eta0_balances_the_proof_terms() {
    let c = TheoremConstants::new(2.0, 3.0, 0.5, 16.0, 1.0).unwrap();
    let trace = random_trace(200, 16, 1);
    let s = theorem1_step_sizes(&c, &trace).unwrap();
    let (a, b) = proof_terms(&c, &trace, s.eta0).unwrap();
    assert!((a - b).abs() < 1e-12 * a.max(b));
    assert!((a + b - theorem1_bound(&c, &trace, 1.0).unwrap()).abs() < 1e-12);
}

#[test]
fn verified_on_constant_trace() {
    let curv = Curvature::new(&[1.0; 4], None).unwrap();
    let w0 = ParamVector::new(vec![1.0; 4]);
    let c = TheoremConstants::for_quadratic(&curv, &w0, 1.0, 1.0, 1.0).unwrap();
    let trace = vec![1.0; 400];
    let rep = verify_theorem1(&curv, &w0, &c, &trace, 100, 3).unwrap();
    assert!(!rep.below_t0 && rep.within_smoothness, "{rep:?}");
    assert!(rep.holds, "{rep:?}");
}

#[test]
fn noiseless_iterates_contract() {
    let curv = Curvature::new(&[0.5, 1.0, 2.0], Some(3)).unwrap();
    let w0 = ParamVector::new(vec![1.0, -2.0, 0.5]);
    let c = TheoremConstants::for_quadratic(&curv, &w0, 1e-12, 1.0, 1.0).unwrap();
    let trace = vec![1.0; 200];
    let s = theorem1_step_sizes(&c, &trace).unwrap();
    let eta = s.etas[0].min(1.0 / c.c);
    let mut w = w0.as_slice().to_vec();
    let mut prev = curv.objective(&w);
    for _ in 0..200 {
        let g = curv.apply(&w);
        w.iter_mut().zip(&g).for_each(|(x, g)| *x -= eta * g);
        let now = curv.objective(&w);
        assert!(now <= prev);
        prev = now;
    }
}

#[test]
fn csv_outputs_have_headers() {
    let mut buf = Vec::new();
    write_bound_csv(&mut buf, &[BoundRow { beta: 1.0, bound: 0.05 }]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "beta,bound\n1.0,0.05\n");
    let mut buf = Vec::new();
    let e = NoiseEstimate {
        batch: 2,
        variance: 0.5,
        replicas: 30,
        ci_low: 0.4,
        ci_high: 0.6,
    };
    write_noise_csv(&mut buf, &[e]).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("batch,variance,replicas,ci_low,ci_high\n2,0.5,"));
}
