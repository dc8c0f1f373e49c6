//! Optimal learning rate for one step on a smooth convex objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

/// `G² = ‖∇L(w)‖²` at a query point.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct GradSignal(f64);

impl GradSignal {
    pub fn new(g2: f64) -> Result<Self> {
        if !(g2 >= 0.0 && g2.is_finite()) {
            return Err(Error::invalid("G² must be finite and non-negative"));
        }
        Ok(Self(g2))
    }

    pub fn from_grad(grad: &ParamVector) -> Result<Self> {
        Self::new(grad.norm_sq())
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalLr {
    /// `kG² / (C(kG² + σ1²))`
    pub exact: f64,
    /// `kG² / (Cσ1²)`, valid while `kG² ≪ σ1²`.
    pub approx: f64,
}

/// Learning rate minimizing the expected one-step bound with `k` machines,
/// each contributing noise `σ1²`, on a `C`-smooth objective.
pub fn optimal_lr_convex(g2: GradSignal, c: f64, sigma1_sq: f64, k: f64) -> Result<OptimalLr> {
    let g2 = g2.value();
    for (name, v) in [("G²", g2), ("C", c), ("σ1²", sigma1_sq), ("k", k)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
    }
    let kg = k * g2;
    Ok(OptimalLr {
        exact: kg / (c * (kg + sigma1_sq)),
        approx: kg / (c * sigma1_sq),
    })
}
