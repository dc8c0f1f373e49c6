//! The single logical sequencer of a cluster run: scheduler plus parameter
//! server. Transports feed it connections, frames and clock ticks, and carry
//! out the [`Out`] actions it emits.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::engine::{Event, Outcome, PreparedRun, RunRecord};
use crate::error::{Error, Result};

use super::ps::{ParameterServer, PushResult};
use super::scheduler::{HeartbeatConfig, RosterDecision, SchedEvent, SchedulerState};
use super::wire::Message;

#[derive(Debug, Clone, PartialEq)]
pub enum Out {
    Send(u32, Message),
    /// Ask the transport for this many new workers.
    Spawn(usize),
    /// Drop the connection of a worker that left or was evicted.
    Close(u32),
}

/// Where workers come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fleet {
    /// The coordinator spawns and retires workers so that each epoch runs with
    /// exactly the scheduled count.
    Replay,
    /// Workers arrive on their own. The first round waits for `wait_for`;
    /// later rounds use `min(target, live)`.
    Live { wait_for: usize },
}

/// Admin commands from the control socket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Resize(usize),
    Pause,
    Resume,
    Stop,
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut it = s.split_whitespace();
        let cmd = match (it.next(), it.next()) {
            (Some("resize"), Some(n)) => {
                let n: usize = n
                    .parse()
                    .map_err(|_| Error::invalid(format!("resize needs a worker count, got {n:?}")))?;
                if n == 0 {
                    return Err(Error::invalid("resize needs at least one worker"));
                }
                Command::Resize(n)
            }
            (Some("pause"), None) => Command::Pause,
            (Some("resume"), None) => Command::Resume,
            (Some("stop"), None) => Command::Stop,
            _ => return Err(Error::invalid(format!("unknown command {:?}", s.trim()))),
        };
        if it.next().is_some() {
            return Err(Error::invalid(format!("trailing arguments in {:?}", s.trim())));
        }
        Ok(cmd)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::Resize(n) => write!(f, "resize {n}"),
            Command::Pause => f.write_str("pause"),
            Command::Resume => f.write_str("resume"),
            Command::Stop => f.write_str("stop"),
        }
    }
}

pub struct Coordinator<'a> {
    prep: &'a PreparedRun,
    ps: ParameterServer<'a>,
    sched: SchedulerState,
    fleet: Fleet,
    setup: String,
    live: BTreeMap<u32, ()>,
    sent_version: BTreeMap<u32, u64>,
    target_override: Option<usize>,
    adjusted_for: Option<(usize, usize)>,
    spawn_outstanding: usize,
    aborted: Option<(u64, usize)>,
    admin_paused: bool,
    stopping: bool,
    pause_noted: bool,
    started: bool,
    done: bool,
}

impl<'a> Coordinator<'a> {
    /// `setup` is the config text sent to every worker on join.
    pub fn new(prep: &'a PreparedRun, hb: HeartbeatConfig, fleet: Fleet, setup: String) -> Result<Self> {
        Ok(Self {
            prep,
            ps: ParameterServer::new(prep)?,
            sched: SchedulerState::new(hb),
            fleet,
            setup,
            live: BTreeMap::new(),
            sent_version: BTreeMap::new(),
            target_override: None,
            adjusted_for: None,
            spawn_outstanding: 0,
            aborted: None,
            admin_paused: false,
            stopping: false,
            pause_noted: false,
            started: false,
            done: false,
        })
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn version(&self) -> u64 {
        self.ps.version()
    }

    pub fn roster(&self) -> &[u32] {
        self.sched.roster()
    }

    pub fn server(&self) -> &ParameterServer<'a> {
        &self.ps
    }

    /// Kicks off the run (in replay mode this requests the first workers).
    pub fn start(&mut self, now: u64, out: &mut Vec<Out>) -> Result<()> {
        self.barrier(now, out)
    }

    /// A new worker said hello; returns its id. A `Setup` is queued for it.
    pub fn join(&mut self, now: u64, out: &mut Vec<Out>) -> Result<u32> {
        let id = self.sched.allocate_id();
        self.sched.observe(SchedEvent::Join(id), now)?;
        self.live.insert(id, ());
        self.spawn_outstanding = self.spawn_outstanding.saturating_sub(1);
        out.push(Out::Send(
            id,
            Message::Setup {
                worker_id: id,
                config: self.setup.clone(),
            },
        ));
        log::debug!("worker {id} joined at {now}");
        if !self.ps.is_open() {
            self.barrier(now, out)?;
        }
        Ok(id)
    }

    /// A worker's connection is gone.
    pub fn leave(&mut self, id: u32, now: u64, out: &mut Vec<Out>) -> Result<()> {
        if self.live.remove(&id).is_none() {
            return Ok(());
        }
        log::info!("worker {id} left at {now}");
        self.sched.observe(SchedEvent::Leave(id), now)?;
        self.sent_version.remove(&id);
        if self.ps.expected().contains(&id) {
            if let Some(a) = self.ps.abort() {
                self.aborted.get_or_insert(a);
            }
        }
        if !self.ps.is_open() {
            self.barrier(now, out)?;
        }
        Ok(())
    }

    pub fn on_message(&mut self, from: u32, msg: Message, now: u64, out: &mut Vec<Out>) -> Result<()> {
        if !self.live.contains_key(&from) {
            return Ok(());
        }
        match msg {
            Message::Heartbeat { worker_id, seq } if worker_id == from => {
                self.sched.observe(SchedEvent::Heartbeat { worker: from, seq }, now)?;
            }
            Message::Hello { .. } | Message::Heartbeat { .. } => {}
            Message::PullWeights { .. } => {
                out.push(Out::Send(from, self.ps.weights_message()));
                self.sent_version.insert(from, self.ps.version());
            }
            Message::PushGrad { worker_id, .. } if worker_id != from => {
                return Err(Error::Cluster(format!("worker {from} pushed as {worker_id}")));
            }
            push @ Message::PushGrad { .. } => {
                self.sched.observe(SchedEvent::Heartbeat { worker: from, seq: 0 }, now)?;
                match self.ps.push(&push)? {
                    PushResult::Pending | PushResult::Ignored => {}
                    PushResult::Stale => out.push(Out::Send(from, Message::PullWeights { worker_id: from })),
                    PushResult::Applied(Outcome::Continue) => self.barrier(now, out)?,
                    PushResult::Applied(Outcome::Diverged) => self.shutdown(out),
                }
            }
            other => {
                return Err(Error::Cluster(format!("server got unexpected message tag {}", other.tag())));
            }
        }
        Ok(())
    }

    /// Clock advance: evicts silent workers and retries a waiting barrier.
    pub fn on_tick(&mut self, now: u64, out: &mut Vec<Out>) -> Result<()> {
        for id in self.sched.expired(now) {
            log::warn!("worker {id} missed its heartbeats; evicting");
            out.push(Out::Close(id));
            self.leave(id, now, out)?;
        }
        if !self.ps.is_open() {
            self.barrier(now, out)?;
        }
        Ok(())
    }

    pub fn control(&mut self, cmd: Command, now: u64, out: &mut Vec<Out>) -> Result<()> {
        log::info!("control: {cmd}");
        match cmd {
            Command::Resize(n) => self.target_override = Some(n),
            Command::Pause => self.admin_paused = true,
            Command::Resume => self.admin_paused = false,
            Command::Stop => self.stopping = true,
        }
        if !self.ps.is_open() {
            self.barrier(now, out)?;
        }
        Ok(())
    }

    pub fn finish(self, config: serde_json::Value) -> Result<RunRecord> {
        self.ps.finish(config)
    }

    fn shutdown(&mut self, out: &mut Vec<Out>) {
        for &id in self.live.keys() {
            out.push(Out::Send(id, Message::Shutdown));
            out.push(Out::Close(id));
        }
        self.done = true;
    }

    /// Between rounds: settle the roster and open the next round if possible.
    fn barrier(&mut self, now: u64, out: &mut Vec<Out>) -> Result<()> {
        if self.done || self.ps.is_open() {
            return Ok(());
        }
        if self.stopping {
            self.shutdown(out);
            return Ok(());
        }
        let Some(epoch) = self.ps.next_epoch() else {
            self.shutdown(out);
            return Ok(());
        };
        if self.admin_paused {
            return Ok(());
        }
        let target = self
            .target_override
            .unwrap_or_else(|| self.prep.run.schedule.workers_at(epoch));
        let starved = self.live.is_empty() && self.spawn_outstanding == 0;
        if self.fleet == Fleet::Replay && (self.adjusted_for != Some((epoch, target)) || starved) {
            self.adjusted_for = Some((epoch, target));
            let have = self.live.len() + self.spawn_outstanding;
            if have < target {
                out.push(Out::Spawn(target - have));
                self.spawn_outstanding += target - have;
            }
            let excess: Vec<u32> = self.live.keys().rev().take(self.live.len().saturating_sub(target)).copied().collect();
            for id in excess {
                out.push(Out::Send(id, Message::Shutdown));
                out.push(Out::Close(id));
                self.live.remove(&id);
                self.sent_version.remove(&id);
                self.sched.observe(SchedEvent::Leave(id), now)?;
            }
        }

        let decision = self.sched.tick(&[], now)?;
        let roster = self.sched.roster().to_vec();
        if decision == RosterDecision::Paused {
            if !self.pause_noted && self.started {
                log::warn!("all workers lost; pausing");
                self.ps.push_event(Event::Paused { iter: self.ps.version() });
                self.pause_noted = true;
            }
            return Ok(());
        }
        if let RosterDecision::Resize(r) = &decision {
            for &id in r {
                out.push(Out::Send(id, Message::Resize { roster: r.clone() }));
            }
        }
        let n = match self.fleet {
            Fleet::Replay if roster.len() < target && self.spawn_outstanding > 0 => return Ok(()),
            Fleet::Live { wait_for } if !self.started && roster.len() < wait_for => return Ok(()),
            _ => target.min(roster.len()),
        };
        self.pause_noted = false;
        self.started = true;

        let active = &roster[..n];
        let Some(assigns) = self.ps.open(active)? else {
            self.shutdown(out);
            return Ok(());
        };
        if let Some((iter, old_workers)) = self.aborted.take() {
            log::info!("restarting update {iter} with {n} workers (was {old_workers})");
            self.ps.push_event(Event::Restart {
                iter,
                old_workers,
                new_workers: n,
            });
        }
        let version = self.ps.version();
        for (a, &id) in assigns.into_iter().zip(active) {
            if self.sent_version.get(&id) != Some(&version) {
                out.push(Out::Send(id, self.ps.weights_message()));
                self.sent_version.insert(id, version);
            }
            out.push(Out::Send(id, a));
        }
        Ok(())
    }
}
