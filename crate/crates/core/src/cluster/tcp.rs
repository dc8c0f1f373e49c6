//! TCP transport.
//!
//! The server runs the [`Coordinator`] on one thread. Each connection gets a
//! reader thread that forwards decoded frames into a single queue; accepts and
//! control commands go through the same queue, so the coordinator sees one
//! ordered stream of inputs. Clock values are milliseconds since start.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::engine::{PreparedRun, RunRecord, TrainRun};
use crate::error::{Error, Result};

use super::coordinator::{Command, Coordinator, Fleet, Out};
use super::scheduler::HeartbeatConfig;
use super::wire::{read_message, write_message, Message, WireError, DEFAULT_MAX_FRAME};
use super::worker::WorkerState;

const ACCEPT_POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, PartialEq)]
pub struct TcpOptions {
    pub heartbeat_ms: u64,
    pub eviction_threshold: u64,
    /// Workers to wait for before the first round.
    pub wait_for_workers: usize,
    pub max_frame: u32,
}

impl Default for TcpOptions {
    fn default() -> Self {
        Self {
            heartbeat_ms: 1000,
            eviction_threshold: 3,
            wait_for_workers: 1,
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

enum Inbound {
    Conn(u64, TcpStream),
    Frame(u64, Message),
    Closed(u64),
    Control(Command, Sender<String>),
}

fn spawn_acceptor(listener: TcpListener, tx: Sender<Inbound>, stop: Arc<AtomicBool>, max_frame: u32) -> Result<()> {
    listener.set_nonblocking(true)?;
    thread::spawn(move || {
        let mut next = 0u64;
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    log::debug!("connection {next} from {peer}");
                    let conn = next;
                    next += 1;
                    let reader = match stream.set_nonblocking(false).and_then(|_| stream.try_clone()) {
                        Ok(r) => r,
                        Err(e) => {
                            log::warn!("dropping connection from {peer}: {e}");
                            continue;
                        }
                    };
                    let _ = stream.set_nodelay(true);
                    if tx.send(Inbound::Conn(conn, stream)).is_err() {
                        return;
                    }
                    let tx = tx.clone();
                    thread::spawn(move || read_loop(conn, reader, tx, max_frame));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    thread::sleep(ACCEPT_POLL);
                }
            }
        }
    });
    Ok(())
}

fn read_loop(conn: u64, mut stream: TcpStream, tx: Sender<Inbound>, max_frame: u32) {
    loop {
        match read_message(&mut stream, max_frame) {
            Ok(msg) => {
                if tx.send(Inbound::Frame(conn, msg)).is_err() {
                    return;
                }
            }
            Err(e) => {
                if !matches!(e, WireError::Closed) {
                    log::warn!("connection {conn}: {e}");
                }
                let _ = stream.shutdown(Shutdown::Both);
                let _ = tx.send(Inbound::Closed(conn));
                return;
            }
        }
    }
}

fn spawn_control(listener: TcpListener, tx: Sender<Inbound>, stop: Arc<AtomicBool>) -> Result<()> {
    listener.set_nonblocking(true)?;
    thread::spawn(move || {
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let tx = tx.clone();
                    thread::spawn(move || control_session(stream, tx));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
                Err(_) => thread::sleep(ACCEPT_POLL),
            }
        }
    });
    Ok(())
}

fn control_session(stream: TcpStream, tx: Sender<Inbound>) {
    let _ = stream.set_nonblocking(false);
    let Ok(mut out) = stream.try_clone() else { return };
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { return };
        if line.trim().is_empty() {
            continue;
        }
        let reply = match line.parse::<Command>() {
            Ok(cmd) => {
                let (rtx, rrx) = mpsc::channel();
                if tx.send(Inbound::Control(cmd, rtx)).is_err() {
                    "error: server stopped".to_string()
                } else {
                    rrx.recv().unwrap_or_else(|_| "error: server stopped".into())
                }
            }
            Err(e) => format!("error: {e}"),
        };
        if writeln!(out, "{reply}").is_err() {
            return;
        }
    }
}

/// Serves one training job until it finishes or is stopped.
pub fn serve_ps(
    prep: &PreparedRun,
    listener: TcpListener,
    control: Option<TcpListener>,
    opts: &TcpOptions,
    header: serde_json::Value,
) -> Result<RunRecord> {
    let (tx, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    spawn_acceptor(listener, tx.clone(), stop.clone(), opts.max_frame)?;
    if let Some(c) = control {
        spawn_control(c, tx.clone(), stop.clone())?;
    }
    drop(tx);
    let result = serve_loop(prep, rx, opts);
    stop.store(true, Ordering::Relaxed);
    result?.finish(header)
}

fn serve_loop<'a>(prep: &'a PreparedRun, rx: Receiver<Inbound>, opts: &TcpOptions) -> Result<Coordinator<'a>> {
    let start = Instant::now();
    let now = || start.elapsed().as_millis() as u64;
    let hb = HeartbeatConfig::new(opts.heartbeat_ms, opts.eviction_threshold);
    let fleet = Fleet::Live {
        wait_for: opts.wait_for_workers,
    };
    let mut coord = Coordinator::new(prep, hb, fleet, serde_json::to_string(&prep.run)?)?;
    let mut pending: BTreeMap<u64, TcpStream> = BTreeMap::new();
    let mut writers: BTreeMap<u32, TcpStream> = BTreeMap::new();
    let mut id_of: BTreeMap<u64, u32> = BTreeMap::new();
    let mut out = Vec::new();
    let poll = Duration::from_millis((opts.heartbeat_ms / 2).max(1));
    coord.start(now(), &mut out)?;

    loop {
        let mut failed = Vec::new();
        for o in out.drain(..) {
            match o {
                Out::Send(id, msg) => {
                    if let Some(s) = writers.get_mut(&id) {
                        if let Err(e) = write_message(s, &msg) {
                            log::warn!("send to worker {id} failed: {e}");
                            failed.push(id);
                        }
                    }
                }
                Out::Close(id) => {
                    if let Some(s) = writers.remove(&id) {
                        let _ = s.shutdown(Shutdown::Both);
                    }
                }
                Out::Spawn(k) => log::debug!("ignoring request for {k} workers"),
            }
        }
        for id in failed {
            if let Some(s) = writers.remove(&id) {
                let _ = s.shutdown(Shutdown::Both);
            }
            coord.leave(id, now(), &mut out)?;
        }
        if !out.is_empty() {
            continue;
        }
        if coord.is_done() {
            return Ok(coord);
        }
        let msg = match rx.recv_timeout(poll) {
            Ok(m) => Some(m),
            Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => return Err(Error::Cluster("listener stopped".into())),
        };
        let t = now();
        match msg {
            Some(Inbound::Conn(c, s)) => {
                pending.insert(c, s);
            }
            Some(Inbound::Frame(c, m)) => match (id_of.get(&c).copied(), m) {
                (None, Message::Hello { .. }) => {
                    if let Some(s) = pending.remove(&c) {
                        let id = coord.join(t, &mut out)?;
                        log::info!("worker {id} joined (connection {c})");
                        id_of.insert(c, id);
                        writers.insert(id, s);
                    }
                }
                (Some(id), m) => match coord.on_message(id, m, t, &mut out) {
                    Err(Error::Cluster(e)) => {
                        log::warn!("evicting worker {id}: {e}");
                        out.push(Out::Close(id));
                        coord.leave(id, t, &mut out)?;
                    }
                    r => r?,
                },
                (None, _) => {}
            },
            Some(Inbound::Closed(c)) => {
                pending.remove(&c);
                if let Some(id) = id_of.remove(&c) {
                    writers.remove(&id);
                    coord.leave(id, t, &mut out)?;
                }
            }
            Some(Inbound::Control(cmd, reply)) => {
                coord.control(cmd, t, &mut out)?;
                let _ = reply.send("ok".into());
            }
            None => {}
        }
        coord.on_tick(now(), &mut out)?;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerOptions {
    pub heartbeat_ms: u64,
    pub max_frame: u32,
    /// Disconnect abruptly on receiving the assignment for this version.
    pub fail_at_version: Option<u64>,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        Self {
            heartbeat_ms: 1000,
            max_frame: DEFAULT_MAX_FRAME,
            fail_at_version: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkerReport {
    pub worker_id: u32,
    pub gradients: u64,
    /// The worker dropped itself on purpose.
    pub dropped: bool,
}

/// Connects to a parameter server and works until told to shut down.
pub fn run_worker(addr: impl ToSocketAddrs, opts: &WorkerOptions) -> Result<WorkerReport> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    write_message(&mut stream, &Message::Hello { worker_id: u32::MAX })?;
    let (id, config) = match read_message(&mut stream, opts.max_frame)? {
        Message::Setup { worker_id, config } => (worker_id, config),
        other => return Err(Error::Cluster(format!("expected Setup, got tag {}", other.tag()))),
    };
    let run: TrainRun = serde_json::from_str(&config)?;
    let prep = run.prepare()?;
    let mut state = WorkerState::new(id, &prep.model, &prep.data);

    let writer = Arc::new(Mutex::new(stream.try_clone()?));
    let stop = Arc::new(AtomicBool::new(false));
    let hb = {
        let (writer, stop) = (writer.clone(), stop.clone());
        let every = Duration::from_millis(opts.heartbeat_ms.max(1));
        thread::spawn(move || {
            let mut seq = 0u64;
            while !stop.load(Ordering::Relaxed) {
                thread::sleep(every);
                seq += 1;
                let mut w = writer.lock().unwrap_or_else(|p| p.into_inner());
                if write_message(&mut *w, &Message::Heartbeat { worker_id: id, seq }).is_err() {
                    return;
                }
            }
        })
    };
    let result = work_loop(&mut stream, &mut state, &writer, opts);
    stop.store(true, Ordering::Relaxed);
    let _ = stream.shutdown(Shutdown::Both);
    let _ = hb.join();
    result
}

fn work_loop(
    stream: &mut TcpStream,
    state: &mut WorkerState<'_>,
    writer: &Mutex<TcpStream>,
    opts: &WorkerOptions,
) -> Result<WorkerReport> {
    let mut gradients = 0;
    loop {
        let msg = match read_message(stream, opts.max_frame) {
            Ok(m) => m,
            Err(WireError::Closed) => return Err(Error::Cluster("server closed the connection".into())),
            Err(e) => return Err(e.into()),
        };
        if let Message::Assign { version, .. } = &msg {
            if opts.fail_at_version == Some(*version) {
                log::info!("worker {} dropping out at version {version}", state.id());
                return Ok(WorkerReport {
                    worker_id: state.id(),
                    gradients,
                    dropped: true,
                });
            }
        }
        let replies = state.handle(msg)?;
        let mut w = writer.lock().unwrap_or_else(|p| p.into_inner());
        for r in &replies {
            gradients += u64::from(matches!(r, Message::PushGrad { .. }));
            write_message(&mut *w, r)?;
        }
        drop(w);
        if state.is_done() {
            return Ok(WorkerReport {
                worker_id: state.id(),
                gradients,
                dropped: false,
            });
        }
    }
}

/// Runs a job over loopback TCP with `workers` local worker threads. Worker
/// `i` uses `worker_opts[i]` when given, defaults otherwise.
pub fn run_local_tcp(
    prep: &PreparedRun,
    opts: &TcpOptions,
    workers: usize,
    worker_opts: &[WorkerOptions],
    header: serde_json::Value,
) -> Result<(RunRecord, Vec<Result<WorkerReport>>)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let handles: Vec<_> = (0..workers)
        .map(|i| {
            let wo = worker_opts.get(i).cloned().unwrap_or(WorkerOptions {
                heartbeat_ms: opts.heartbeat_ms,
                max_frame: opts.max_frame,
                fail_at_version: None,
            });
            thread::spawn(move || run_worker(addr, &wo))
        })
        .collect();
    let opts = TcpOptions {
        wait_for_workers: opts.wait_for_workers.max(1),
        ..opts.clone()
    };
    let record = serve_ps(prep, listener, None, &opts, header);
    let reports = handles
        .into_iter()
        .map(|h| h.join().unwrap_or_else(|_| Err(Error::Cluster("worker thread panicked".into()))))
        .collect();
    Ok((record?, reports))
}
