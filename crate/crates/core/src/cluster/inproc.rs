//! Deterministic single-threaded transport.
//!
//! Every message is encoded to a frame and decoded on delivery, so the wire
//! format is exercised exactly as over TCP. One logical tick delivers all
//! queued server frames, lets each worker (ascending connection order) handle
//! its inbox and heartbeat, then feeds the workers' frames to the coordinator
//! in that same order.

use std::collections::{BTreeMap, VecDeque};

use crate::engine::{PreparedRun, RunRecord};
use crate::error::{Error, Result};

use super::coordinator::{Coordinator, Fleet, Out};
use super::scheduler::HeartbeatConfig;
use super::wire::{decode, encode, Message};
use super::worker::WorkerState;

/// Makes a worker go silent (no gradient, no heartbeats) once it receives the
/// assignment for update `version`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropSpec {
    pub version: u64,
    pub worker: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InProcOptions {
    pub heartbeat: HeartbeatConfig,
    pub drops: Vec<DropSpec>,
    /// Abort if the run has not finished after this many ticks.
    pub max_ticks: u64,
}

impl Default for InProcOptions {
    fn default() -> Self {
        Self {
            heartbeat: HeartbeatConfig::new(1, 3),
            drops: Vec::new(),
            max_ticks: 100_000_000,
        }
    }
}

struct Slot<'a> {
    worker: WorkerState<'a>,
    inbox: VecDeque<Vec<u8>>,
    greeted: bool,
    silent: bool,
}

/// Runs the job on an in-process cluster whose worker pool replays the
/// configured schedule.
pub fn run_inproc(prep: &PreparedRun, opts: &InProcOptions, header: serde_json::Value) -> Result<RunRecord> {
    let setup = serde_json::to_string(&prep.run)?;
    let mut coord = Coordinator::new(prep, opts.heartbeat, Fleet::Replay, setup)?;
    let mut drops = opts.drops.clone();
    let mut slots: BTreeMap<u64, Slot<'_>> = BTreeMap::new();
    let mut conn_of: BTreeMap<u32, u64> = BTreeMap::new();
    let mut id_of: BTreeMap<u64, u32> = BTreeMap::new();
    let mut next_conn = 0u64;
    let mut out = Vec::new();
    coord.start(0, &mut out)?;

    let mut now = 0u64;
    loop {
        for o in out.drain(..) {
            match o {
                Out::Send(id, msg) => {
                    let conn = conn_of.get(&id).ok_or_else(|| Error::Cluster(format!("no connection for worker {id}")))?;
                    if let Some(slot) = slots.get_mut(conn) {
                        slot.inbox.push_back(encode(&msg));
                    }
                }
                Out::Spawn(k) => {
                    for _ in 0..k {
                        slots.insert(
                            next_conn,
                            Slot {
                                worker: WorkerState::new(u32::MAX, &prep.model, &prep.data),
                                inbox: VecDeque::new(),
                                greeted: false,
                                silent: false,
                            },
                        );
                        next_conn += 1;
                    }
                }
                Out::Close(id) => {
                    if let Some(conn) = conn_of.remove(&id) {
                        slots.remove(&conn);
                        id_of.remove(&conn);
                    }
                }
            }
        }
        if coord.is_done() {
            break;
        }
        now += 1;
        if now > opts.max_ticks {
            return Err(Error::Cluster(format!("in-process run stalled after {now} ticks")));
        }

        let mut inbound: Vec<(u64, Vec<u8>)> = Vec::new();
        for (&conn, slot) in slots.iter_mut() {
            if slot.silent {
                continue;
            }
            if !slot.greeted {
                slot.greeted = true;
                inbound.push((conn, encode(&Message::Hello { worker_id: u32::MAX })));
                continue;
            }
            while let Some(frame) = slot.inbox.pop_front() {
                let msg = decode(&frame)?;
                if let Message::Assign { version, worker_id, .. } = &msg {
                    let hit = drops.iter().position(|d| d.version == *version && d.worker == *worker_id);
                    if let Some(i) = hit {
                        drops.remove(i);
                        slot.silent = true;
                        break;
                    }
                }
                for reply in slot.worker.handle(msg)? {
                    inbound.push((conn, encode(&reply)));
                }
            }
            if !slot.silent && !slot.worker.is_done() {
                inbound.push((conn, encode(&slot.worker.heartbeat())));
            }
        }

        for (conn, frame) in inbound {
            let msg = decode(&frame)?;
            match (id_of.get(&conn), msg) {
                (None, Message::Hello { .. }) => {
                    let id = coord.join(now, &mut out)?;
                    conn_of.insert(id, conn);
                    id_of.insert(conn, id);
                }
                (Some(&id), msg) => coord.on_message(id, msg, now, &mut out)?,
                (None, _) => {}
            }
        }
        coord.on_tick(now, &mut out)?;
    }
    coord.finish(header)
}
