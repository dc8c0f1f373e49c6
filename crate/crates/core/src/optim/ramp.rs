use serde::{Deserialize, Serialize};

/// Linear ramp of the momentum compensation factor after a batch increase.
///
/// Over `len` iterations starting at `t0` the learning-rate multiplier moves
/// linearly from `start` to `end` and then stays at `end`. For an isolated
/// change by ratio `k` from a settled state, `start = 1` and `end = k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompensationRamp {
    pub t0: u64,
    pub k: f64,
    pub len: u64,
    pub start: f64,
    pub end: f64,
}

/// Ramp length `⌈mult·k⌉`, at least one iteration.
pub fn ramp_len(t_mult: f64, k: f64) -> u64 {
    ((t_mult * k).ceil() as u64).max(1)
}

impl CompensationRamp {
    /// A ramp from 1 to `k` with the default length `⌈t_mult·k⌉`.
    pub fn new(t0: u64, k: f64, t_mult: f64) -> Self {
        Self {
            t0,
            k,
            len: ramp_len(t_mult, k),
            start: 1.0,
            end: k,
        }
    }

    pub fn with_len(t0: u64, k: f64, len: u64) -> Self {
        Self {
            t0,
            k,
            len: len.max(1),
            start: 1.0,
            end: k,
        }
    }

    pub fn is_done(&self, t: u64) -> bool {
        t.saturating_sub(self.t0) >= self.len
    }
}

/// `γ(t) = start + ((t − t0)/T)·(end − start)` while `t − t0 < T`, else `end`.
/// Times before `t0` evaluate to `start`.
pub fn compensation_factor(ramp: &CompensationRamp, t: u64) -> f64 {
    let elapsed = t.saturating_sub(ramp.t0);
    if elapsed >= ramp.len {
        ramp.end
    } else {
        ramp.start + (elapsed as f64 / ramp.len as f64) * (ramp.end - ramp.start)
    }
}
