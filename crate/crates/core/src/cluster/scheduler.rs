//! Worker liveness and roster decisions.
//!
//! Time is an abstract monotone `u64`: logical ticks in-process, milliseconds
//! over TCP. Roster changes are only applied when [`SchedulerState::tick`] is
//! called, which the coordinator does at iteration barriers.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeartbeatConfig {
    pub interval: u64,
    /// Missed intervals before eviction.
    pub eviction_threshold: u64,
}

impl HeartbeatConfig {
    pub fn new(interval: u64, eviction_threshold: u64) -> Self {
        Self {
            interval,
            eviction_threshold,
        }
    }

    pub fn deadline(&self) -> u64 {
        self.interval.saturating_mul(self.eviction_threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedEvent {
    Join(u32),
    Leave(u32),
    Heartbeat { worker: u32, seq: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RosterDecision {
    Unchanged,
    Resize(Vec<u32>),
    /// No live workers remain.
    Paused,
}

#[derive(Debug, Clone)]
pub struct SchedulerState {
    hb: HeartbeatConfig,
    roster: Vec<u32>,
    last_seen: BTreeMap<u32, u64>,
    pending_joins: BTreeSet<u32>,
    pending_leaves: BTreeSet<u32>,
    now: u64,
}

impl SchedulerState {
    pub fn new(hb: HeartbeatConfig) -> Self {
        Self {
            hb,
            roster: Vec::new(),
            last_seen: BTreeMap::new(),
            pending_joins: BTreeSet::new(),
            pending_leaves: BTreeSet::new(),
            now: 0,
        }
    }

    pub fn heartbeat_config(&self) -> HeartbeatConfig {
        self.hb
    }

    /// Current roster, ascending by id. Position in it is the worker's rank.
    pub fn roster(&self) -> &[u32] {
        &self.roster
    }

    pub fn n(&self) -> usize {
        self.roster.len()
    }

    /// Workers known to be alive, including those waiting to join.
    pub fn live_count(&self) -> usize {
        self.last_seen.len()
    }

    /// Lowest id not held by a live or joining worker.
    pub fn allocate_id(&self) -> u32 {
        (0..).find(|id| !self.last_seen.contains_key(id)).unwrap_or(u32::MAX)
    }

    fn advance(&mut self, now: u64) -> Result<()> {
        if now < self.now {
            return Err(Error::Cluster(format!("clock went backwards: {now} < {}", self.now)));
        }
        self.now = now;
        Ok(())
    }

    /// Records an event without touching the roster.
    pub fn observe(&mut self, ev: SchedEvent, now: u64) -> Result<()> {
        self.advance(now)?;
        match ev {
            SchedEvent::Join(id) => {
                self.last_seen.insert(id, now);
                self.pending_leaves.remove(&id);
                if !self.roster.contains(&id) {
                    self.pending_joins.insert(id);
                }
            }
            SchedEvent::Leave(id) => {
                self.last_seen.remove(&id);
                self.pending_joins.remove(&id);
                if self.roster.contains(&id) {
                    self.pending_leaves.insert(id);
                }
            }
            SchedEvent::Heartbeat { worker, .. } => {
                if let Some(t) = self.last_seen.get_mut(&worker) {
                    *t = now;
                }
            }
        }
        Ok(())
    }

    /// Live workers whose last heartbeat is more than `h·interval` old.
    pub fn expired(&self, now: u64) -> Vec<u32> {
        self.last_seen
            .iter()
            .filter(|&(_, &t)| now.saturating_sub(t) > self.hb.deadline())
            .map(|(&id, _)| id)
            .collect()
    }

    /// Applies `events`, evicts expired workers and settles the roster.
    pub fn tick(&mut self, events: &[SchedEvent], now: u64) -> Result<RosterDecision> {
        self.advance(now)?;
        for &ev in events {
            self.observe(ev, now)?;
        }
        for id in self.expired(now) {
            self.observe(SchedEvent::Leave(id), now)?;
        }
        let changed = !self.pending_joins.is_empty() || !self.pending_leaves.is_empty();
        let mut set: BTreeSet<u32> = self.roster.iter().copied().collect();
        set.extend(std::mem::take(&mut self.pending_joins));
        for id in std::mem::take(&mut self.pending_leaves) {
            set.remove(&id);
        }
        self.roster = set.into_iter().collect();
        Ok(if self.roster.is_empty() {
            RosterDecision::Paused
        } else if changed {
            RosterDecision::Resize(self.roster.clone())
        } else {
            RosterDecision::Unchanged
        })
    }
}

/// One scheduler step at a barrier.
pub fn scheduler_tick(state: &mut SchedulerState, events: &[SchedEvent], now: u64) -> Result<RosterDecision> {
    state.tick(events, now)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> SchedulerState {
        SchedulerState::new(HeartbeatConfig::new(10, 3))
    }

    #[test]
    fn join_is_deferred_to_the_barrier() {
        let mut s = sched();
        s.observe(SchedEvent::Join(0), 0).unwrap();
        assert_eq!(s.n(), 0);
        assert_eq!(s.tick(&[], 1).unwrap(), RosterDecision::Resize(vec![0]));
        let id = s.allocate_id();
        assert_eq!(id, 1);
        assert_eq!(
            scheduler_tick(&mut s, &[SchedEvent::Join(id)], 2).unwrap(),
            RosterDecision::Resize(vec![0, 1])
        );
        assert_eq!(s.tick(&[], 3).unwrap(), RosterDecision::Unchanged);
    }

    #[test]
    fn heartbeat_gap_evicts() {
        let mut s = sched();
        s.tick(&[SchedEvent::Join(0), SchedEvent::Join(1)], 0).unwrap();
        s.observe(SchedEvent::Heartbeat { worker: 0, seq: 1 }, 25).unwrap();
        assert!(s.expired(30).is_empty());
        assert_eq!(s.expired(31), vec![1]);
        assert_eq!(s.tick(&[], 31).unwrap(), RosterDecision::Resize(vec![0]));
        assert_eq!(s.allocate_id(), 1);
    }

    #[test]
    fn losing_everyone_pauses_and_resumes() {
        let mut s = sched();
        s.tick(&[SchedEvent::Join(0)], 0).unwrap();
        assert_eq!(s.tick(&[SchedEvent::Leave(0)], 1).unwrap(), RosterDecision::Paused);
        assert_eq!(s.tick(&[], 2).unwrap(), RosterDecision::Paused);
        assert_eq!(s.tick(&[SchedEvent::Join(0)], 3).unwrap(), RosterDecision::Resize(vec![0]));
    }

    #[test]
    fn clock_must_be_monotone() {
        let mut s = sched();
        s.tick(&[], 5).unwrap();
        assert!(s.tick(&[], 4).is_err());
    }

    #[test]
    fn join_then_leave_before_barrier_is_a_no_op() {
        let mut s = sched();
        s.tick(&[SchedEvent::Join(0)], 0).unwrap();
        assert_eq!(
            s.tick(&[SchedEvent::Join(1), SchedEvent::Leave(1)], 1).unwrap(),
            RosterDecision::Unchanged
        );
    }
}
