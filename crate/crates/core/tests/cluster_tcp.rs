use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use elastic_sgd::cluster::tcp::{run_local_tcp, run_worker, serve_ps, TcpOptions, WorkerOptions};
use elastic_sgd::data::SyntheticKind;
use elastic_sgd::engine::{run_training, BatchPolicy, DatasetSpec, Event, MetricsConfig, RunRecord, TrainRun};
use elastic_sgd::model::{ModelKind, ModelSpec};
use elastic_sgd::optim::{LrSchedule, OptimizerConfig, Strategy};
use elastic_sgd::schedule::Schedule;

fn job(schedule: Schedule, epochs: usize) -> TrainRun {
    TrainRun {
        model: ModelSpec::new(ModelKind::LogisticRegression { input_dim: 2 }),
        dataset: DatasetSpec {
            kind: SyntheticKind::blobs(),
            n: 120,
            seed: 3,
        },
        optimizer: OptimizerConfig::new(Strategy::DynamicSgd, 0.1, 0.9, 8),
        lr_schedule: LrSchedule::default(),
        schedule,
        batch_policy: BatchPolicy::FixedPerWorker(4),
        epochs,
        seed: 8,
        metrics: MetricsConfig {
            probe_samples: 0,
            record_samples: true,
        },
    }
}

fn fast() -> TcpOptions {
    TcpOptions {
        heartbeat_ms: 100,
        eviction_threshold: 3,
        wait_for_workers: 4,
        ..TcpOptions::default()
    }
}

fn audit_ledger(rec: &RunRecord, n: usize) {
    let mut per_epoch: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for e in &rec.entries {
        per_epoch.entry(e.epoch).or_default().extend(e.samples.as_ref().unwrap());
    }
    for (epoch, mut s) in per_epoch {
        s.sort_unstable();
        assert_eq!(s, (0..n).collect::<Vec<_>>(), "epoch {epoch} lost or duplicated samples");
    }
}

#[test]
fn tcp_run_matches_simulation() {
    let run = job(Schedule::spike(2, 1, 2.0), 3);
    let prep = run.prepare().unwrap();
    let header = serde_json::to_value(&run).unwrap();
    let sim = run_training(&prep).unwrap();
    let (rec, reports) = run_local_tcp(&prep, &fast(), 4, &[], header).unwrap();
    assert_eq!(rec, sim);
    assert!(reports.iter().all(|r| r.as_ref().is_ok_and(|r| !r.dropped)));
}

#[test]
fn mid_iteration_drop_restarts_the_barrier() {
    let run = job(Schedule::fixed(4), 2);
    let prep = run.prepare().unwrap();
    let dropper = WorkerOptions {
        heartbeat_ms: 100,
        fail_at_version: Some(3),
        ..WorkerOptions::default()
    };
    let normal = WorkerOptions {
        heartbeat_ms: 100,
        ..WorkerOptions::default()
    };
    let opts = [dropper, normal.clone(), normal.clone(), normal];
    let (rec, reports) = run_local_tcp(&prep, &fast(), 4, &opts, serde_json::Value::Null).unwrap();
    assert!(reports[0].as_ref().unwrap().dropped);
    assert!(rec.summary.events.contains(&Event::Restart {
        iter: 3,
        old_workers: 4,
        new_workers: 3,
    }));
    assert_eq!(rec.entries[3].n_workers, 3);
    assert_eq!(rec.entries[3].batch_size, 12);
    audit_ledger(&rec, 120);
    assert!(!rec.summary.diverged);
}

#[test]
fn control_socket_commands() {
    let run = job(Schedule::fixed(2), 100_000);
    let prep = run.prepare().unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let control = TcpListener::bind("127.0.0.1:0").unwrap();
    let (addr, caddr) = (listener.local_addr().unwrap(), control.local_addr().unwrap());
    let workers: Vec<_> = (0..2)
        .map(|_| {
            thread::spawn(move || {
                run_worker(
                    addr,
                    &WorkerOptions {
                        heartbeat_ms: 100,
                        ..WorkerOptions::default()
                    },
                )
            })
        })
        .collect();
    let admin = thread::spawn(move || {
        thread::sleep(Duration::from_millis(100));
        let stream = TcpStream::connect(caddr).unwrap();
        let mut out = stream.try_clone().unwrap();
        let mut lines = BufReader::new(stream).lines();
        let mut ask = |cmd: &str| {
            writeln!(out, "{cmd}").unwrap();
            lines.next().unwrap().unwrap()
        };
        let replies = [ask("bogus"), ask("resize 1"), ask("pause")];
        thread::sleep(Duration::from_millis(50));
        let resumed = ask("resume");
        let stopped = ask("stop");
        (replies, resumed, stopped)
    });
    let opts = TcpOptions {
        wait_for_workers: 2,
        ..fast()
    };
    let rec = serve_ps(&prep, listener, Some(control), &opts, serde_json::Value::Null).unwrap();
    let (replies, resumed, stopped) = admin.join().unwrap();
    assert!(replies[0].starts_with("error:"));
    assert_eq!(&replies[1..], ["ok", "ok"]);
    assert_eq!((resumed.as_str(), stopped.as_str()), ("ok", "ok"));
    // Stopped long before the last epoch, and the resize took effect.
    assert!(rec.entries.len() < 100_000 * 15);
    assert!(rec.entries.iter().any(|e| e.n_workers == 1));
    for w in workers {
        assert!(w.join().unwrap().is_ok());
    }
}
