//! Scheduler, parameter server and workers over a pluggable transport.
//!
//! [`Coordinator`] is the single sequencer; [`run_inproc`] drives it with a
//! deterministic in-process transport and [`tcp`] over sockets. A cluster run
//! without failures produces the same [`RunRecord`](crate::engine::RunRecord)
//! as [`run_training`](crate::engine::run_training), bit for bit.

mod coordinator;
mod inproc;
mod ps;
mod scheduler;
pub mod tcp;
mod worker;
pub mod wire;

pub use coordinator::{Command, Coordinator, Fleet, Out};
pub use inproc::{run_inproc, DropSpec, InProcOptions};
pub use ps::{ps_round, ParameterServer, PushResult};
pub use scheduler::{scheduler_tick, HeartbeatConfig, RosterDecision, SchedEvent, SchedulerState};
pub use worker::WorkerState;
