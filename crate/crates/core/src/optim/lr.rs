use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrKind {
    Constant,
    /// Raised half-cosine `½(1 + cos(π·e/E))`.
    Cosine,
}

/// Learning-rate multiplier over the run: a linear warmup at the start times
/// an optional cosine decay. Epoch positions are fractional, so the schedule
/// stays well defined when the number of iterations per epoch changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: LrKind,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: f64,
    /// Lower bound on the warmup multiplier.
    #[serde(default)]
    pub warmup_floor: f64,
}

fn default_warmup() -> f64 {
    5.0
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            kind: LrKind::Cosine,
            warmup_epochs: default_warmup(),
            warmup_floor: 0.0,
        }
    }
}

impl LrSchedule {
    pub fn constant() -> Self {
        Self {
            kind: LrKind::Constant,
            warmup_epochs: 0.0,
            warmup_floor: 0.0,
        }
    }

    /// Name of the decay curve, recorded in run metadata.
    pub fn form(&self) -> &'static str {
        match self.kind {
            LrKind::Constant => "constant",
            LrKind::Cosine => "raised_half_cosine",
        }
    }

    /// Warmup multiplier for an update that ends at fractional epoch `done`.
    pub fn warmup_at(&self, done: f64) -> f64 {
        if self.warmup_epochs <= 0.0 {
            return 1.0;
        }
        (done / self.warmup_epochs).min(1.0).max(self.warmup_floor)
    }

    /// Decay multiplier at fractional epoch `position`.
    pub fn decay_at(&self, position: f64, total_epochs: usize) -> f64 {
        match self.kind {
            LrKind::Constant => 1.0,
            LrKind::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * position / total_epochs as f64).cos()),
        }
    }

    /// Multiplier for an update covering the fractional epoch span
    /// `[start, end)`: warmup is measured at `end`, decay at `start`.
    pub fn at_progress(&self, start: f64, end: f64, total_epochs: usize) -> f64 {
        self.warmup_at(end) * self.decay_at(start, total_epochs)
    }

    /// Warmup multiplier at the end of iteration `iter_in_epoch`: reaches
    /// `1/warmup_iters` after the first update and exactly 1 at the end of warmup.
    pub fn warmup(&self, epoch: usize, iter_in_epoch: usize, iters_per_epoch: usize) -> f64 {
        self.warmup_at(epoch as f64 + (iter_in_epoch + 1) as f64 / iters_per_epoch.max(1) as f64)
    }

    pub fn decay(&self, epoch: usize, iter_in_epoch: usize, iters_per_epoch: usize, total_epochs: usize) -> f64 {
        self.decay_at(epoch as f64 + iter_in_epoch as f64 / iters_per_epoch.max(1) as f64, total_epochs)
    }

    /// Combined multiplier `warmup · decay`.
    pub fn lr_at(&self, epoch: usize, iter_in_epoch: usize, iters_per_epoch: usize, total_epochs: usize) -> Result<f64> {
        if total_epochs == 0 || epoch > total_epochs || (epoch == total_epochs && iter_in_epoch > 0) {
            return Err(Error::invalid(format!(
                "epoch {epoch} outside schedule of {total_epochs} epochs"
            )));
        }
        if iters_per_epoch == 0 {
            return Err(Error::invalid("iters_per_epoch must be positive"));
        }
        Ok(self.warmup(epoch, iter_in_epoch, iters_per_epoch)
            * self.decay(epoch, iter_in_epoch, iters_per_epoch, total_epochs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_starts_at_one_over_warmup_iters() {
        let s = LrSchedule::default();
        let m = s.lr_at(0, 0, 100, 90).unwrap();
        assert!((m - 1.0 / 500.0).abs() < 1e-15);
        // Exactly 1 at the last warmup iteration (cosine ≈ 1 that early).
        assert_eq!(s.warmup(4, 99, 100), 1.0);
        assert!(s.warmup(4, 98, 100) < 1.0);
        assert_eq!(s.warmup(10, 0, 100), 1.0);
    }

    #[test]
    fn cosine_midpoint_and_end() {
        let s = LrSchedule::default();
        assert!((s.lr_at(45, 0, 100, 90).unwrap() - 0.5).abs() < 1e-15);
        assert!(s.lr_at(90, 0, 100, 90).unwrap().abs() < 1e-15);
        assert_eq!(s.decay(0, 0, 100, 90), 1.0);
        assert!(s.lr_at(91, 0, 100, 90).is_err());
    }

    #[test]
    fn multiplier_in_unit_interval_and_monotone_after_warmup() {
        let s = LrSchedule::default();
        let mut prev = f64::INFINITY;
        for e in 5..90 {
            for i in 0..10 {
                let m = s.lr_at(e, i, 10, 90).unwrap();
                assert!((0.0..=1.0).contains(&m));
                assert!(m <= prev);
                prev = m;
            }
        }
    }

    #[test]
    fn constant_without_warmup_is_one() {
        assert_eq!(LrSchedule::constant().lr_at(3, 7, 10, 5).unwrap(), 1.0);
    }
}
