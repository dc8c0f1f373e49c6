//! Worker state machine shared by both transports.

use crate::data::Dataset;
use crate::engine::worker_sums;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamVector;

use super::wire::Message;

#[derive(Debug, Clone, PartialEq)]
struct PendingAssign {
    iter: u64,
    version: u64,
    samples: Vec<usize>,
}

/// Holds a cached copy of the weights and turns assignments into gradient
/// sums. Every reply is returned to the caller for sending.
pub struct WorkerState<'a> {
    id: u32,
    model: &'a Model,
    data: &'a Dataset,
    weights: Option<(u64, ParamVector)>,
    pending: Option<PendingAssign>,
    seq: u64,
    done: bool,
}

impl<'a> WorkerState<'a> {
    pub fn new(id: u32, model: &'a Model, data: &'a Dataset) -> Self {
        Self {
            id,
            model,
            data,
            weights: None,
            pending: None,
            seq: 0,
            done: false,
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn version(&self) -> Option<u64> {
        self.weights.as_ref().map(|(v, _)| *v)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn heartbeat(&mut self) -> Message {
        self.seq += 1;
        Message::Heartbeat {
            worker_id: self.id,
            seq: self.seq,
        }
    }

    pub fn handle(&mut self, msg: Message) -> Result<Vec<Message>> {
        match msg {
            Message::Setup { worker_id, .. } => {
                self.id = worker_id;
                Ok(vec![])
            }
            Message::Weights { version, payload } => {
                if payload.len() != self.model.param_count() {
                    return Err(Error::DimensionMismatch {
                        expected: self.model.param_count(),
                        got: payload.len(),
                    });
                }
                if self.version().is_some_and(|v| v > version) {
                    return Err(Error::Cluster(format!(
                        "weights version went backwards: {} -> {version}",
                        self.version().unwrap_or_default()
                    )));
                }
                self.weights = Some((version, ParamVector::from(payload)));
                match self.pending.take() {
                    Some(p) if p.version == version => Ok(vec![self.compute(&p)?]),
                    Some(p) if p.version > version => {
                        self.pending = Some(p);
                        Ok(vec![])
                    }
                    _ => Ok(vec![]),
                }
            }
            Message::Assign {
                iter, version, samples, ..
            } => {
                let p = PendingAssign {
                    iter,
                    version,
                    samples: samples.into_iter().map(|i| i as usize).collect(),
                };
                if self.version() == Some(version) {
                    Ok(vec![self.compute(&p)?])
                } else {
                    self.pending = Some(p);
                    Ok(vec![Message::PullWeights { worker_id: self.id }])
                }
            }
            // From the server this means: the cached weights are stale.
            Message::PullWeights { .. } => {
                self.weights = None;
                Ok(vec![Message::PullWeights { worker_id: self.id }])
            }
            Message::Resize { .. } => Ok(vec![]),
            Message::Shutdown => {
                self.done = true;
                Ok(vec![])
            }
            other => Err(Error::Cluster(format!("worker got unexpected message tag {}", other.tag()))),
        }
    }

    fn compute(&self, p: &PendingAssign) -> Result<Message> {
        let (_, w) = self.weights.as_ref().ok_or_else(|| Error::Cluster("no weights".into()))?;
        let agg = worker_sums(self.model, self.data, w, &p.samples)?;
        Ok(Message::PushGrad {
            worker_id: self.id,
            iter: p.iter,
            version: p.version,
            local_batch: agg.count as u32,
            loss_sum: agg.loss_sum,
            grad: agg.grad_sum.as_slice().to_vec(),
        })
    }
}
