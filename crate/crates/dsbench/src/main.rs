use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use verify::{History, DEFAULT_CAP};

use dsbench::workload::{pair_scripts, random_scripts};
use dsbench::{append_csv, measure, run, Algo, Setup};

#[derive(Parser)]
#[command(name = "dsbench", version, about = "Runs and checks distributed data structures on the many-core simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a workload and report message counts and throughput.
    Run(RunArgs),
    /// Check a recorded history for linearizability.
    Check(CheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        matches!(s, Switch::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mix {
    /// Insert/remove pairs per client.
    Pairs,
    /// Random operation mix.
    Random,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    algo: Algo,
    #[arg(long, default_value_t = 2)]
    islands: usize,
    #[arg(long, default_value_t = 8)]
    cores: usize,
    /// Total client operations.
    #[arg(long, default_value_t = 1000)]
    ops: usize,
    /// Maximum local work (in steps) between two operations of a client.
    #[arg(long, default_value_t = 0)]
    work: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Per-server capacity of bounded structures.
    #[arg(long, default_value_t = 64)]
    capacity: usize,
    /// Number of data servers.
    #[arg(long, default_value_t = 2)]
    servers: usize,
    /// Number of clients; defaults to every free core.
    #[arg(long)]
    clients: Option<usize>,
    /// Island masters that batch requests; the default depends on the algorithm.
    #[arg(long, value_enum)]
    hier: Option<Switch>,
    /// Elimination at island masters.
    #[arg(long, value_enum)]
    elim: Option<Switch>,
    /// CC-Synch combining in front of the central server.
    #[arg(long)]
    ccsynch: bool,
    /// Growable token queue/deque and unsorted list.
    #[arg(long, value_enum, default_value = "on")]
    dynamic: Switch,
    #[arg(long, value_enum, default_value = "pairs")]
    mix: Mix,
    /// Append a metrics row to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the recorded history to this file.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Write the event log to this CSV file.
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpecName {
    Stack,
    Queue,
    Deque,
    Set,
    Register,
}

impl SpecName {
    fn name(self) -> &'static str {
        match self {
            SpecName::Stack => "stack",
            SpecName::Queue => "queue",
            SpecName::Deque => "deque",
            SpecName::Set => "set",
            SpecName::Register => "register",
        }
    }
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    history: PathBuf,
    #[arg(long, value_enum)]
    spec: SpecName,
    /// Largest history the checker accepts.
    #[arg(long, default_value_t = DEFAULT_CAP)]
    cap: usize,
}

fn cmd_run(a: RunArgs) -> Result<ExitCode> {
    let mut setup = Setup::new(a.algo, a.islands, a.cores, a.seed);
    setup.work = a.work;
    setup.capacity = a.capacity;
    setup.servers = a.servers;
    setup.clients = a.clients;
    setup.ccsynch = a.ccsynch;
    setup.dynamic = a.dynamic.into();
    if let Some(h) = a.hier {
        setup.hier = h.into();
        if !setup.hier {
            setup.elim = false;
        }
    }
    if let Some(e) = a.elim {
        setup.elim = e.into();
    }
    if a.events.is_none() {
        setup.log = simcore::LogLevel::Notes;
    }
    let (_, _, clients) = dsbench::placement(&setup)?;
    let scripts = match a.mix {
        Mix::Pairs => pair_scripts(a.algo, clients.len(), a.ops),
        Mix::Random => random_scripts(a.algo, clients.len(), a.ops, &mut ChaCha8Rng::seed_from_u64(a.seed)),
    };
    let out = run(&setup, &scripts)?;
    if let Some(p) = &a.history {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        out.history.write_csv(BufWriter::new(f))?;
    }
    if let Some(p) = &a.events {
        std::fs::write(p, out.report.log.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    let m = measure(&setup, &out);
    if let Some(p) = &a.csv {
        append_csv(p, std::slice::from_ref(&m))?;
    }
    println!(
        "{} m={} c={} N={} W={} seed={}: ops={} steps={} total_msgs={} max_server_msgs={} throughput={:.4} sf={:.4}",
        m.algo, m.m, m.c, a.ops, m.w, m.seed, m.n, m.steps, m.total_msgs, m.max_server_msgs, m.throughput, m.sf
    );
    if !out.report.clean() {
        eprintln!(
            "run did not finish cleanly: truncated={} blocked={:?} faults={:?}",
            out.report.truncated, out.report.blocked, out.report.faults
        );
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(a: CheckArgs) -> Result<ExitCode> {
    let f = File::open(&a.history).with_context(|| format!("opening {}", a.history.display()))?;
    let h = History::read_csv(BufReader::new(f))?;
    let r = verify::check_named(&h, a.spec.name(), a.cap)?;
    if r.ok {
        println!("linearizable ({} operations)", h.operations().len());
        return Ok(ExitCode::SUCCESS);
    }
    println!("not linearizable");
    if let Some(p) = r.failing_prefix {
        println!("shortest failing prefix:");
        print!("{}", p.to_csv());
    }
    Ok(ExitCode::from(1))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Check(a) => cmd_check(a),
    };
    r.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
