//! `elastic-sgd`: run, compare and analyze elastic SGD experiments.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 when a run diverged.

mod analyze;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use elastic_sgd::cluster::tcp::{run_worker, serve_ps, WorkerOptions};
use elastic_sgd::compare::compare;
use elastic_sgd::config::{execute, parse_config, preset, Mode, RunConfig};
use elastic_sgd::engine::RunRecord;
use elastic_sgd::optim::Strategy;

#[derive(Parser)]
#[command(name = "elastic-sgd", version, about = "Elastic synchronous SGD laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file and write its record as JSON lines.
    Run {
        config: PathBuf,
        /// Record path; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named experiment preset.
    Preset {
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Print the canonical config instead of running it.
        #[arg(long)]
        print_config: bool,
    },
    /// Monte-Carlo and closed-form checks driven by a config.
    Analyze {
        #[arg(value_enum)]
        what: analyze::Analysis,
        config: PathBuf,
        /// JSON report path (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV table path: (B, variance) for noise, (beta, bound) for theorem.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Tabulate final loss, min grad-norm and spike magnitude per record.
    Compare {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Serve a job as a TCP parameter server.
    ServePs {
        config: PathBuf,
        #[arg(long)]
        listen: Option<String>,
        /// Admin socket accepting `resize <n>`, `pause`, `resume`, `stop`.
        #[arg(long)]
        control: Option<String>,
        /// Workers to wait for before the first update.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Join a parameter server as a worker.
    Worker {
        addr: String,
        #[arg(long, default_value_t = 1000)]
        heartbeat_ms: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    PlainSgd,
    MomentumSgd,
    LinearScaling,
    DynamicSgd,
    Decoupled,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::PlainSgd => Strategy::PlainSgd,
            StrategyArg::MomentumSgd => Strategy::MomentumSgd,
            StrategyArg::LinearScaling => Strategy::LinearScaling,
            StrategyArg::DynamicSgd => Strategy::DynamicSgd,
            StrategyArg::Decoupled => Strategy::Decoupled,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Simulate,
    ClusterInproc,
    ClusterTcp,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Simulate => Mode::Simulate,
            ModeArg::ClusterInproc => Mode::ClusterInproc,
            ModeArg::ClusterTcp => Mode::ClusterTcp,
        }
    }
}

/// Outcome that maps to a non-zero exit without being an error.
struct Diverged;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Diverged)) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

pub(crate) fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_config(&text)?)
}

fn dispatch(cmd: Command) -> Result<Option<Diverged>> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = load_config(&config)?;
            run(&cfg, out)
        }
        Command::Preset {
            name,
            seed,
            out,
            strategy,
            epochs,
            mode,
            print_config,
        } => {
            let mut cfg = preset(&name)?.with_seed(seed);
            if let Some(s) = strategy {
                cfg.train.optimizer.strategy = s.into();
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            // Overrides go through the same validation as a file would.
            let cfg = parse_config(&cfg.canonical_string()?)?;
            if print_config {
                println!("{}", serde_json::to_string_pretty(&cfg.canonical()?)?);
                return Ok(None);
            }
            run(&cfg, out)
        }
        Command::Analyze {
            what,
            config,
            out,
            csv,
            replicas,
        } => {
            let cfg = load_config(&config)?;
            let report = analyze::run(what, &cfg, replicas, csv.as_deref())?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
                None => println!("{text}"),
            }
            Ok(None)
        }
        Command::Compare { records, json } => {
            let recs = records.iter().map(|p| read_record(p)).collect::<Result<Vec<_>>>()?;
            let report = compare(&recs)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_table());
            }
            Ok(None)
        }
        Command::ServePs {
            config,
            listen,
            control,
            workers,
            out,
        } => {
            let cfg = load_config(&config)?;
            let prep = cfg.train.prepare()?;
            let addr = listen.unwrap_or_else(|| cfg.cluster.listen.clone());
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            log::info!("parameter server on {}", listener.local_addr()?);
            let control = match control.or_else(|| cfg.cluster.control.clone()) {
                Some(a) => Some(TcpListener::bind(&a).with_context(|| format!("binding {a}"))?),
                None => None,
            };
            let opts = cfg.cluster.tcp_options(workers.or(cfg.cluster.workers).unwrap_or(1));
            let record = serve_ps(&prep, listener, control, &opts, cfg.canonical()?)?;
            finish(&record, out.or(cfg.output.map(PathBuf::from)))
        }
        Command::Worker { addr, heartbeat_ms } => {
            let opts = WorkerOptions {
                heartbeat_ms,
                ..WorkerOptions::default()
            };
            let report = run_worker(addr.as_str(), &opts)?;
            println!(
                "{}",
                serde_json::json!({"worker_id": report.worker_id, "gradients": report.gradients})
            );
            Ok(None)
        }
    }
}

fn run(cfg: &RunConfig, out: Option<PathBuf>) -> Result<Option<Diverged>> {
    let record = execute(cfg)?;
    finish(&record, out.or(cfg.output.clone().map(PathBuf::from)))
}

/// Writes the record, prints the summary and maps divergence to its exit code.
fn finish(record: &RunRecord, out: Option<PathBuf>) -> Result<Option<Diverged>> {
    if let Some(path) = out {
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(f);
        record.write_jsonl(&mut w)?;
        w.flush()?;
    }
    println!("{}", serde_json::to_string(&record.summary)?);
    Ok(record.summary.diverged.then_some(Diverged))
}

fn read_record(path: &Path) -> Result<RunRecord> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let rec = RunRecord::read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    if rec.entries.is_empty() && !rec.summary.diverged {
        bail!("{} has no updates", path.display());
    }
    Ok(rec)
}
