//! Update rules and learning-rate machinery.
//!
//! Two momentum forms are used. The `u` form keeps the raw gradient history
//! and multiplies by the learning rate at the update; the `v` form absorbs the
//! learning rate into the buffer. They coincide for a static learning rate.
//!
//! Batch-size changes are handled per [`Strategy`]:
//! - `linear_scaling` multiplies the learning rate by `k` and rescales the
//!   `v` buffer by `k` at the change;
//! - `dynamic_sgd` leaves the `u` buffer alone and ramps a compensation
//!   factor from the old to the new multiplier over `⌈8k⌉` iterations
//!   (decreases jump immediately);
//! - `decoupled` feeds the unnormalized gradient sum with a batch-independent
//!   step size, so nothing needs to change;
//! - `plain_sgd` and `momentum_sgd` ignore batch changes.

mod lr;
mod ramp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

pub use lr::{LrKind, LrSchedule};
pub use ramp::{compensation_factor, ramp_len, CompensationRamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    PlainSgd,
    MomentumSgd,
    LinearScaling,
    DynamicSgd,
    Decoupled,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::PlainSgd,
        Strategy::MomentumSgd,
        Strategy::LinearScaling,
        Strategy::DynamicSgd,
        Strategy::Decoupled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::PlainSgd => "plain_sgd",
            Strategy::MomentumSgd => "momentum_sgd",
            Strategy::LinearScaling => "linear_scaling",
            Strategy::DynamicSgd => "dynamic_sgd",
            Strategy::Decoupled => "decoupled",
        }
    }

    /// Momentum form the strategy keeps its buffer in.
    pub fn form(self, momentum_sgd_form: MomentumForm) -> MomentumForm {
        match self {
            Strategy::PlainSgd | Strategy::DynamicSgd => MomentumForm::U,
            Strategy::LinearScaling | Strategy::Decoupled => MomentumForm::V,
            Strategy::MomentumSgd => momentum_sgd_form,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumForm {
    /// `u ← μu + g; w ← w − η·u`
    U,
    /// `v ← μv + η·g; w ← w − v`
    V,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub strategy: Strategy,
    /// Learning rate for a batch of `base_batch` samples.
    pub base_lr: f64,
    #[serde(default)]
    pub momentum: f64,
    pub base_batch: usize,
    #[serde(default = "default_t_mult")]
    pub compensation_t_mult: f64,
    /// Buffer form used by `momentum_sgd`.
    #[serde(default = "default_form")]
    pub momentum_form: MomentumForm,
}

fn default_t_mult() -> f64 {
    8.0
}

fn default_form() -> MomentumForm {
    MomentumForm::U
}

impl OptimizerConfig {
    pub fn new(strategy: Strategy, base_lr: f64, momentum: f64, base_batch: usize) -> Self {
        Self {
            strategy,
            base_lr,
            momentum,
            base_batch,
            compensation_t_mult: default_t_mult(),
            momentum_form: default_form(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid("base_lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if self.base_batch == 0 {
            return Err(Error::invalid("base_batch must be positive"));
        }
        if !(self.compensation_t_mult > 0.0 && self.compensation_t_mult.is_finite()) {
            return Err(Error::invalid("compensation_t_mult must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentumBuffer {
    pub form: MomentumForm,
    pub values: ParamVector,
}

impl MomentumBuffer {
    pub fn zeros(form: MomentumForm, dim: usize) -> Self {
        Self {
            form,
            values: ParamVector::zeros(dim),
        }
    }
}

fn ensure(cond: bool, what: &'static str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn check_inputs(w: &ParamVector, grad: &ParamVector, lr: f64) -> Result<()> {
    grad.check_dim(w.dim())?;
    ensure(w.is_finite(), "weights")?;
    ensure(grad.is_finite(), "gradient")?;
    ensure(lr.is_finite(), "learning rate")
}

/// `w − lr·grad`
pub fn sgd_step(w: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
    check_inputs(w, grad, lr)?;
    let mut out = w.clone();
    out.axpy(-lr, grad);
    out.finite("weights")
}

/// `u' = μu + grad; w' = w − lr·u'`
pub fn momentum_step_u(
    u: &ParamVector,
    w: &ParamVector,
    grad: &ParamVector,
    lr: f64,
    mu: f64,
) -> Result<(ParamVector, ParamVector)> {
    dynamic_sgd_step(u, w, grad, lr, mu, 1.0)
}

/// `v' = μv + lr·grad; w' = w − v'`
pub fn momentum_step_v(
    v: &ParamVector,
    w: &ParamVector,
    grad: &ParamVector,
    lr: f64,
    mu: f64,
) -> Result<(ParamVector, ParamVector)> {
    check_inputs(w, grad, lr)?;
    v.check_dim(w.dim())?;
    let mut v_next = v.scaled(mu);
    v_next.axpy(lr, grad);
    let mut w_next = w.clone();
    w_next.axpy(-1.0, &v_next);
    Ok((w_next.finite("weights")?, v_next.finite("momentum")?))
}

/// Momentum correction under linear scaling: `v' = k·v`.
pub fn linear_scaling_rescale(v: &ParamVector, k: f64) -> Result<ParamVector> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::invalid(format!("scaling ratio must be positive, got {k}")));
    }
    Ok(v.scaled(k))
}

/// `u' = μu + grad; w' = w − γ·lr·u'`. The buffer is never rescaled.
pub fn dynamic_sgd_step(
    u: &ParamVector,
    w: &ParamVector,
    grad: &ParamVector,
    lr_base: f64,
    mu: f64,
    gamma: f64,
) -> Result<(ParamVector, ParamVector)> {
    check_inputs(w, grad, lr_base * gamma)?;
    u.check_dim(w.dim())?;
    let mut u_next = u.scaled(mu);
    u_next.add_assign(grad);
    let mut w_next = w.clone();
    w_next.axpy(-(gamma * lr_base), &u_next);
    Ok((w_next.finite("weights")?, u_next.finite("momentum")?))
}

/// `v' = μv + η̂·Σ∇l; w' = w − v'` with an unnormalized gradient sum.
pub fn decoupled_momentum_step(
    v: &ParamVector,
    w: &ParamVector,
    sum_grads: &ParamVector,
    step_size_hat: f64,
    mu: f64,
) -> Result<(ParamVector, ParamVector)> {
    momentum_step_v(v, w, sum_grads, step_size_hat, mu)
}

/// What one optimizer step did, for the run record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Learning rate applied to the batch-mean gradient (for `decoupled`, the
    /// equivalent `η̂·B`).
    pub effective_lr: f64,
    /// Multiplier on top of the schedule: the batch ratio for linear scaling,
    /// the compensation factor for dynamic SGD, 1 otherwise.
    pub gamma: f64,
}

/// Inputs of one [`Optimizer::step`].
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    /// Unnormalized gradient sum over the batch, without weight decay.
    pub grad_sum: &'a ParamVector,
    /// Samples in the batch.
    pub count: usize,
    /// Batch size the strategy scales by. Differs from `count` only for the
    /// short final batch of an epoch, which is not a batch-size change.
    pub nominal_batch: usize,
    /// Weight-decay gradient at the current weights.
    pub decay: Option<&'a ParamVector>,
    /// Warmup/decay schedule multiplier.
    pub schedule: f64,
    /// Update index.
    pub t: u64,
}

impl<'a> StepInput<'a> {
    pub fn new(grad_sum: &'a ParamVector, count: usize, schedule: f64, t: u64) -> Self {
        Self {
            grad_sum,
            count,
            nominal_batch: count,
            decay: None,
            schedule,
            t,
        }
    }
}

/// Stateful optimizer owned by the single updater of a run.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    buffer: MomentumBuffer,
    /// Target multiplier `B_t / B_base` for the current batch.
    target: f64,
    ramp: Option<CompensationRamp>,
    batch: Option<usize>,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, dim: usize) -> Result<Self> {
        cfg.validate()?;
        let form = cfg.strategy.form(cfg.momentum_form);
        Ok(Self {
            cfg,
            buffer: MomentumBuffer::zeros(form, dim),
            target: 1.0,
            ramp: None,
            batch: None,
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn buffer(&self) -> &MomentumBuffer {
        &self.buffer
    }

    pub fn ramp(&self) -> Option<&CompensationRamp> {
        self.ramp.as_ref()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Current LR multiplier at update index `t` (before the schedule).
    pub fn multiplier(&self, t: u64) -> f64 {
        match self.cfg.strategy {
            Strategy::PlainSgd | Strategy::MomentumSgd => 1.0,
            Strategy::LinearScaling | Strategy::Decoupled => self.target,
            Strategy::DynamicSgd => match &self.ramp {
                Some(r) => compensation_factor(r, t),
                None => self.target,
            },
        }
    }

    /// Informs the optimizer of the global batch size for update `t`. The
    /// first call sets the starting multiplier without a ramp; later calls
    /// with a different size run the strategy's change hook.
    pub fn set_batch(&mut self, batch: usize, t: u64) -> Result<()> {
        if batch == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let base = self.cfg.base_batch as f64;
        let old = match self.batch.replace(batch) {
            None => {
                self.target = batch as f64 / base;
                return Ok(());
            }
            Some(old) if old == batch => return Ok(()),
            Some(old) => old,
        };
        let k = batch as f64 / old as f64;
        let new_target = batch as f64 / base;
        match self.cfg.strategy {
            Strategy::LinearScaling => {
                self.buffer.values = linear_scaling_rescale(&self.buffer.values, k)?;
            }
            Strategy::DynamicSgd => {
                let current = self.multiplier(t);
                self.ramp = if k > 1.0 {
                    Some(CompensationRamp {
                        t0: t,
                        k,
                        len: ramp_len(self.cfg.compensation_t_mult, k),
                        start: current,
                        end: new_target,
                    })
                } else {
                    None
                };
            }
            Strategy::PlainSgd | Strategy::MomentumSgd | Strategy::Decoupled => {}
        }
        self.target = new_target;
        Ok(())
    }

    /// Applies one update from the unnormalized gradient sum.
    pub fn step(&mut self, w: &mut ParamVector, input: StepInput<'_>) -> Result<StepInfo> {
        let StepInput {
            grad_sum,
            count,
            nominal_batch,
            decay,
            schedule,
            t,
        } = input;
        if count == 0 {
            return Err(Error::invalid("empty batch"));
        }
        self.set_batch(nominal_batch, t)?;
        let batch = count;
        let mu = self.cfg.momentum;
        let lr_sched = self.cfg.base_lr * schedule;
        let gamma = self.multiplier(t);
        let b = batch as f64;
        let mean = || {
            let mut g = grad_sum.scaled(1.0 / b);
            if let Some(d) = decay {
                g.add_assign(d);
            }
            g
        };
        let (w_next, buf_next, effective_lr) = match (self.cfg.strategy, self.buffer.form) {
            (Strategy::PlainSgd, _) => (sgd_step(w, &mean(), lr_sched)?, self.buffer.values.clone(), lr_sched),
            (Strategy::MomentumSgd, MomentumForm::U) | (Strategy::DynamicSgd, _) => {
                let (w2, u2) = dynamic_sgd_step(&self.buffer.values, w, &mean(), lr_sched, mu, gamma)?;
                (w2, u2, lr_sched * gamma)
            }
            (Strategy::MomentumSgd, MomentumForm::V) | (Strategy::LinearScaling, _) => {
                let lr = lr_sched * gamma;
                let (w2, v2) = momentum_step_v(&self.buffer.values, w, &mean(), lr, mu)?;
                (w2, v2, lr)
            }
            (Strategy::Decoupled, _) => {
                let step_hat = lr_sched / self.cfg.base_batch as f64;
                let mut drive = grad_sum.clone();
                if let Some(d) = decay {
                    drive.axpy(b, d);
                }
                let (w2, v2) = decoupled_momentum_step(&self.buffer.values, w, &drive, step_hat, mu)?;
                (w2, v2, step_hat * b)
            }
        };
        *w = w_next;
        self.buffer.values = buf_next;
        self.steps += 1;
        Ok(StepInfo { effective_lr, gamma })
    }
}
