//! Parameter server: owns the primary weights and applies one update per
//! synchronous round.

use std::collections::BTreeMap;

use crate::engine::{Aggregate, Event, IterationPlan, Outcome, PreparedRun, RunRecord, Trainer};
use crate::error::{Error, Result};
use crate::params::ParamVector;

use super::wire::Message;

/// Result of handing a `PushGrad` to the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushResult {
    /// Stored; other contributions are still outstanding.
    Pending,
    /// Computed against old weights; the worker must pull.
    Stale,
    /// Not part of the open round (late, duplicate or unexpected sender).
    Ignored,
    /// Last contribution arrived and the update was applied.
    Applied(Outcome),
}

#[derive(Debug)]
struct OpenRound {
    round: u64,
    plan: IterationPlan,
    roster: Vec<u32>,
    contributions: BTreeMap<u32, Aggregate>,
}

pub struct ParameterServer<'a> {
    trainer: Trainer<'a>,
    open: Option<OpenRound>,
    rounds: u64,
}

impl<'a> ParameterServer<'a> {
    pub fn new(prep: &'a PreparedRun) -> Result<Self> {
        Ok(Self {
            trainer: Trainer::new(prep)?,
            open: None,
            rounds: 0,
        })
    }

    /// Weights version: the number of applied updates.
    pub fn version(&self) -> u64 {
        self.trainer.updates()
    }

    pub fn weights(&self) -> &ParamVector {
        self.trainer.weights()
    }

    pub fn weights_message(&self) -> Message {
        Message::Weights {
            version: self.version(),
            payload: self.weights().as_slice().to_vec(),
        }
    }

    pub fn next_epoch(&mut self) -> Option<usize> {
        self.trainer.next_epoch()
    }

    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }

    /// Workers whose contribution the open round waits for.
    pub fn expected(&self) -> &[u32] {
        self.open.as_ref().map_or(&[], |o| &o.roster)
    }

    pub fn open_plan(&self) -> Option<&IterationPlan> {
        self.open.as_ref().map(|o| &o.plan)
    }

    pub fn push_event(&mut self, e: Event) {
        self.trainer.push_event(e);
    }

    /// Opens the next round over `roster` (ascending ids; rank is position)
    /// and returns one `Assign` per worker, or `None` when the run is over.
    pub fn open(&mut self, roster: &[u32]) -> Result<Option<Vec<Message>>> {
        if self.open.is_some() {
            return Err(Error::Cluster("a round is already open".into()));
        }
        if roster.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Cluster("roster must be strictly ascending".into()));
        }
        let Some(plan) = self.trainer.plan(roster.len())? else {
            return Ok(None);
        };
        let round = self.rounds;
        self.rounds += 1;
        let version = self.version();
        let assigns = roster
            .iter()
            .enumerate()
            .map(|(rank, &id)| Message::Assign {
                worker_id: id,
                epoch: plan.epoch as u64,
                iter: round,
                version,
                samples: plan.worker_samples(rank).iter().map(|&i| i as u64).collect(),
            })
            .collect();
        self.open = Some(OpenRound {
            round,
            plan,
            roster: roster.to_vec(),
            contributions: BTreeMap::new(),
        });
        Ok(Some(assigns))
    }

    /// Abandons the open round and returns its update index and worker
    /// count. The samples are re-planned by the next [`open`](Self::open).
    pub fn abort(&mut self) -> Option<(u64, usize)> {
        self.open.take().map(|o| (o.plan.t, o.roster.len()))
    }

    pub fn push(&mut self, msg: &Message) -> Result<PushResult> {
        let Message::PushGrad {
            worker_id,
            iter,
            version,
            local_batch,
            loss_sum,
            grad,
        } = msg
        else {
            return Err(Error::Cluster(format!("expected PushGrad, got tag {}", msg.tag())));
        };
        let current = self.version();
        let dim = self.weights().dim();
        let Some(open) = self.open.as_mut() else {
            return Ok(PushResult::Ignored);
        };
        let Ok(rank) = open.roster.binary_search(worker_id) else {
            return Ok(PushResult::Ignored);
        };
        if *version != current {
            return Ok(PushResult::Stale);
        }
        if *iter != open.round || open.contributions.contains_key(worker_id) {
            return Ok(PushResult::Ignored);
        }
        let want = open.plan.slices[rank].len();
        if *local_batch as usize != want || grad.len() != dim {
            return Err(Error::Cluster(format!(
                "worker {worker_id} pushed {} samples / {} values, expected {want} / {dim}",
                local_batch,
                grad.len()
            )));
        }
        open.contributions.insert(
            *worker_id,
            Aggregate {
                loss_sum: *loss_sum,
                grad_sum: ParamVector::from(grad.clone()),
                count: want,
            },
        );
        if open.contributions.len() < open.roster.len() {
            return Ok(PushResult::Pending);
        }
        let contributions = std::mem::take(&mut open.contributions);
        let (_, outcome) = ps_round(self, &contributions)?;
        Ok(PushResult::Applied(outcome))
    }

    pub fn finish(self, config: serde_json::Value) -> Result<RunRecord> {
        self.trainer.finish(config)
    }
}

/// Reduces the contributions of the open round in ascending worker id,
/// applies the optimizer step and closes the round. Returns the new version.
pub fn ps_round(ps: &mut ParameterServer<'_>, contributions: &BTreeMap<u32, Aggregate>) -> Result<(u64, Outcome)> {
    let open = ps.open.as_ref().ok_or_else(|| Error::Cluster("no open round".into()))?;
    if !contributions.keys().eq(open.roster.iter()) {
        return Err(Error::Cluster("contributions do not match the expected set".into()));
    }
    let agg = Aggregate::reduce(ps.weights().dim(), contributions.values());
    let open = ps.open.take().expect("checked above");
    let outcome = ps.trainer.commit(&open.plan, &agg)?;
    Ok((ps.version(), outcome))
}
