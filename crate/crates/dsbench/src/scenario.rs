//! Builds a simulated machine for one algorithm, places servers, island masters and
//! clients, runs per-client scripts and records the resulting history.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::rc::Rc;

use anyhow::{bail, ensure, Context as _, Result};
use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simcore::{CoreId, Ctx, LogLevel, RunReport, Sim, SimConfig, SimResult, Topology};
use verify::{check_with_cap, Capacity, CheckResult, DequeSpec, History, QueueSpec, SetSpec, StackSpec, Val};

use dstructs::central::{CcClient, Central, CentralKind, DEFAULT_H};
use dstructs::dir_structs::{DirStruct, SyncKind};
use dstructs::directory::Directory;
use dstructs::lists::{SList, UList};
use dstructs::net::{inserted, removed, run_master};
use dstructs::syncprims::Manager;
use dstructs::token::{RingKind, TokenClient, TokenRing, TokenStack};
use dstructs::{Client, MasterConfig, Msg, Op, Recorder, Reply};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Algo {
    Cstack,
    Estack,
    Hstack,
    Tstack,
    Dstack,
    Cqueue,
    Hqueue,
    Dqueue,
    Tqueue,
    Ddeque,
    Tdeque,
    Ulist,
    UlistAlt,
    Slist,
    Atomics,
    Rwmon,
    Syncqueue,
    Delayqueue,
    Gas,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Central(CentralKind),
    Dir(SyncKind),
    Ring(RingKind),
    TStack,
    UList,
    SList,
    Manager,
}

impl Algo {
    pub fn family(self) -> Family {
        match self {
            Algo::Cstack | Algo::Estack | Algo::Hstack => Family::Central(CentralKind::Stack),
            Algo::Cqueue | Algo::Hqueue => Family::Central(CentralKind::Queue),
            Algo::Dstack => Family::Dir(SyncKind::Stack),
            Algo::Dqueue | Algo::Delayqueue => Family::Dir(SyncKind::Queue),
            Algo::Ddeque => Family::Dir(SyncKind::Deque),
            Algo::Syncqueue => Family::Dir(SyncKind::SyncQueue),
            Algo::Tqueue => Family::Ring(RingKind::Queue),
            Algo::Tdeque => Family::Ring(RingKind::Deque),
            Algo::Tstack => Family::TStack,
            Algo::Ulist | Algo::UlistAlt => Family::UList,
            Algo::Slist => Family::SList,
            Algo::Atomics | Algo::Rwmon | Algo::Gas => Family::Manager,
        }
    }

    /// Name of the sequential specification its histories are checked against.
    pub fn spec(self) -> &'static str {
        match self.family() {
            Family::Central(CentralKind::Stack) | Family::Dir(SyncKind::Stack) | Family::TStack => "stack",
            Family::Central(CentralKind::Queue) | Family::Dir(SyncKind::Queue | SyncKind::SyncQueue) | Family::Ring(RingKind::Queue) => "queue",
            Family::Central(CentralKind::Deque) | Family::Dir(SyncKind::Deque) | Family::Ring(RingKind::Deque) => "deque",
            Family::UList | Family::SList => "set",
            Family::Manager => "register",
        }
    }

    pub fn name(self) -> String {
        self.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
    }

    /// Servers whose processes understand island-master batches.
    fn batchable(self) -> bool {
        matches!(self.family(), Family::Central(_) | Family::Dir(_) | Family::Manager)
    }
}

/// One client operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Call {
    Push(i64),
    Pop,
    Enq(i64),
    /// Delay-queue enqueue: the element becomes removable `delay` steps after the call.
    DelayEnq(i64, u64),
    Deq,
    EnqH(i64),
    EnqT(i64),
    DeqH,
    DeqT,
    Insert(i64),
    Search(i64),
    Delete(i64),
    Read(i64),
    Write(i64, i64),
    Faa(i64, i64),
    Swap(i64, i64),
    Cas(i64, i64, i64),
    Gas(i64, i64),
    LazyCas(i64, i64, i64),
    /// Read of a cell under its monitor's read lock.
    ReadSection(i64),
    /// Write of a cell under its monitor's write lock.
    WriteSection(i64, i64),
}

impl Call {
    /// Operation name and arguments as recorded in the history.
    pub fn record(self) -> (&'static str, Vec<i64>) {
        match self {
            Call::Push(v) => ("push", vec![v]),
            Call::Pop => ("pop", vec![]),
            Call::Enq(v) | Call::DelayEnq(v, _) => ("enq", vec![v]),
            Call::Deq => ("deq", vec![]),
            Call::EnqH(v) => ("enq_h", vec![v]),
            Call::EnqT(v) => ("enq_t", vec![v]),
            Call::DeqH => ("deq_h", vec![]),
            Call::DeqT => ("deq_t", vec![]),
            Call::Insert(k) => ("insert", vec![k]),
            Call::Search(k) => ("search", vec![k]),
            Call::Delete(k) => ("delete", vec![k]),
            Call::Read(a) | Call::ReadSection(a) => ("read", vec![a]),
            Call::Write(a, v) | Call::WriteSection(a, v) => ("write", vec![a, v]),
            Call::Faa(a, d) => ("faa", vec![a, d]),
            Call::Swap(a, v) => ("swap", vec![a, v]),
            Call::Gas(a, v) => ("gas", vec![a, v]),
            Call::Cas(a, o, n) => ("cas", vec![a, o, n]),
            Call::LazyCas(a, o, n) => ("lazy_cas", vec![a, o, n]),
        }
    }

    fn op(self) -> Op {
        match self {
            Call::Push(_) => Op::Push,
            Call::Pop => Op::Pop,
            Call::Enq(_) | Call::DelayEnq(..) => Op::Enq,
            Call::Deq => Op::Deq,
            Call::EnqH(_) => Op::EnqH,
            Call::EnqT(_) => Op::EnqT,
            Call::DeqH => Op::DeqH,
            Call::DeqT => Op::DeqT,
            Call::Insert(_) => Op::Insert,
            Call::Search(_) => Op::Search,
            Call::Delete(_) => Op::Delete,
            _ => Op::Rd,
        }
    }

    fn data(self) -> i64 {
        match self {
            Call::Push(v) | Call::Enq(v) | Call::DelayEnq(v, _) | Call::EnqH(v) | Call::EnqT(v) => v,
            _ => 0,
        }
    }
}

/// Everything that determines a run besides the client scripts.
#[derive(Clone, Debug)]
pub struct Setup {
    pub algo: Algo,
    pub islands: usize,
    pub cores: usize,
    pub seed: u64,
    /// Per-server (or per-chunk) capacity of bounded structures.
    pub capacity: usize,
    /// Number of data servers (directory, ring, list or manager servers).
    pub servers: usize,
    /// Number of client processes; all free cores when `None`.
    pub clients: Option<usize>,
    pub hier: bool,
    pub elim: bool,
    pub ccsynch: bool,
    pub ccsynch_h: usize,
    /// Token queue/deque and unsorted lists grow without bound.
    pub dynamic: bool,
    /// Token clients pick a random server for every request instead of the cached one.
    pub scatter: bool,
    /// Upper bound of the random local work between two operations of a client.
    pub work: u64,
    pub timer: u64,
    pub batch_cap: usize,
    pub log: LogLevel,
    pub round_robin: bool,
    pub max_steps: u64,
}

impl Setup {
    /// Defaults for `algo`: the hierarchical variants switch on batching (and elimination for EStack).
    pub fn new(algo: Algo, islands: usize, cores: usize, seed: u64) -> Self {
        let hier = matches!(algo, Algo::Estack | Algo::Hstack | Algo::Hqueue | Algo::Dqueue);
        Setup {
            algo,
            islands,
            cores,
            seed,
            capacity: 64,
            servers: 2,
            clients: None,
            hier,
            elim: algo == Algo::Estack,
            ccsynch: false,
            ccsynch_h: DEFAULT_H,
            dynamic: true,
            scatter: false,
            work: 0,
            timer: 8,
            batch_cap: 16,
            log: LogLevel::Full,
            round_robin: false,
            max_steps: 5_000_000,
        }
    }

    /// Small flat setup used by the randomized correctness tests.
    pub fn flat(algo: Algo, clients: usize, seed: u64) -> Self {
        let mut s = Setup::new(algo, 1, clients + 4, seed);
        s.clients = Some(clients);
        s.hier = false;
        s.elim = false;
        s.capacity = 2;
        s
    }

    fn check(&self) -> Result<()> {
        ensure!(self.servers >= 1, "at least one server is required");
        ensure!(!self.hier || self.algo.batchable(), "{} servers do not accept island batches", self.algo.name());
        ensure!(!self.elim || self.hier, "elimination happens at island masters and needs --hier on");
        ensure!(
            !self.ccsynch || matches!(self.algo.family(), Family::Central(_)),
            "CC-Synch combining is available for the centralized structures only"
        );
        ensure!(!(self.ccsynch && self.hier), "CC-Synch and island masters are alternatives");
        Ok(())
    }

    fn masters(&self) -> Vec<CoreId> {
        if self.hier {
            (0..self.islands).map(|i| i * self.cores).collect()
        } else {
            Vec::new()
        }
    }

    fn server_count(&self) -> usize {
        match self.algo.family() {
            Family::Central(_) => 1,
            Family::Dir(_) => self.servers + 1,
            _ => self.servers,
        }
    }
}

/// Result of [`run`].
pub struct Outcome {
    pub report: RunReport,
    pub history: History,
    pub servers: Vec<CoreId>,
    pub masters: Vec<CoreId>,
    pub clients: Vec<CoreId>,
    /// Final contents of every data server, in the structure's own order.
    pub contents: Vec<Vec<i64>>,
    /// Completed client operations.
    pub ops: usize,
}

#[derive(Clone)]
enum Structure {
    Central(Central),
    Dir(DirStruct, SyncKind),
    Ring,
    TStack,
    UList(UList),
    SList(SList),
    Manager(Manager),
}

enum Endpoint {
    Plain(Client),
    Cc(CcClient),
    Token(TokenClient),
}

impl Endpoint {
    fn client(&self) -> &Client {
        match self {
            Endpoint::Plain(c) => c,
            Endpoint::Cc(c) => &c.cl,
            Endpoint::Token(t) => &t.cl,
        }
    }

    async fn call(&self, dest: CoreId, op: Op, data: i64) -> SimResult<Reply> {
        let cl = self.client();
        let req = cl.req(op).data(data);
        match self {
            Endpoint::Cc(cc) => cc.call(dest, req).await,
            _ => cl.call(dest, req).await,
        }
    }
}

type Snapshot = Box<dyn Fn() -> Vec<Vec<i64>>>;

fn spawn_structure(setup: &Setup, sim: &mut Sim<Msg>, servers: &[CoreId]) -> Result<(Structure, Snapshot)> {
    let cap = setup.capacity.max(1);
    Ok(match setup.algo.family() {
        Family::Central(kind) => {
            let c = Central::new(servers[0], kind);
            let p = c.spawn(sim)?;
            (Structure::Central(c), Box::new(move || vec![p.borrow().iter().copied().collect()]))
        }
        Family::Dir(kind) => {
            let dir = Directory::new(servers[1..].to_vec());
            let d = DirStruct { sync: servers[0], dir };
            let p = d.dir.spawn(sim)?;
            d.spawn_sync(sim, kind)?;
            let snap = move || {
                let mut out = vec![Vec::new()];
                out.extend(p.borrow().iter().map(|bs| {
                    let mut ks: Vec<i64> = bs.iter().flatten().map(|e| e.key).collect();
                    ks.sort_unstable();
                    ks
                }));
                out
            };
            (Structure::Dir(d, kind), Box::new(snap))
        }
        Family::Ring(kind) => {
            let ring = TokenRing::new(kind, servers.to_vec(), cap, setup.dynamic);
            let p = ring.spawn(sim)?;
            (Structure::Ring, Box::new(move || p.borrow().iter().map(|m| m.values().copied().collect()).collect()))
        }
        Family::TStack => {
            let st = TokenStack::new(servers.to_vec(), cap);
            let p = st.spawn(sim)?;
            (Structure::TStack, Box::new(move || p.borrow().clone()))
        }
        Family::UList => {
            let mut ul = UList::new(servers.to_vec(), cap);
            if setup.algo == Algo::UlistAlt {
                ul = ul.two_phase();
            }
            if !setup.dynamic {
                ul = ul.fixed();
            }
            let p = ul.spawn(sim)?;
            (Structure::UList(ul), Box::new(move || p.borrow().iter().map(|m| m.keys().copied().collect()).collect()))
        }
        Family::SList => {
            let sl = SList::new(servers.to_vec(), cap);
            let p = sl.spawn(sim)?;
            (Structure::SList(sl), Box::new(move || p.borrow().iter().map(|m| m.keys().copied().collect()).collect()))
        }
        Family::Manager => {
            let m = Manager::new(servers.to_vec());
            m.spawn(sim)?;
            (Structure::Manager(m), Box::new(Vec::new))
        }
    })
}

fn bool_val(ok: bool) -> Val {
    Val::Bool(ok)
}

async fn exec(st: &Structure, ep: &Endpoint, call: Call) -> SimResult<Val> {
    let cl = ep.client();
    Ok(match st {
        Structure::Central(c) => {
            let r = ep.call(c.server, call.op(), call.data()).await?;
            if call.op().is_insert() {
                inserted(&r)
            } else {
                removed(&r)
            }
        }
        Structure::Dir(d, kind) => match (kind, call) {
            (SyncKind::Stack, Call::Push(v)) => {
                if d.push(cl, v).await? {
                    Val::Unit
                } else {
                    Val::Full
                }
            }
            (SyncKind::Stack, Call::Pop) => d.pop(cl).await?.map_or(Val::Nil, Val::Int),
            (SyncKind::SyncQueue, Call::Enq(v)) => {
                d.sync_enqueue(cl, v).await?;
                Val::Unit
            }
            (SyncKind::SyncQueue, Call::Deq) => Val::Int(d.sync_dequeue(cl).await?),
            (_, Call::DelayEnq(v, delay)) => {
                d.delay_enqueue(cl, v, delay).await?;
                Val::Unit
            }
            (SyncKind::Queue, Call::Enq(v)) => {
                d.enqueue(cl, v).await?;
                Val::Unit
            }
            (SyncKind::Queue, Call::Deq) => d.dequeue(cl).await?.map_or(Val::Nil, Val::Int),
            (SyncKind::Deque, c) if c.op().is_insert() => {
                d.deque_op(cl, c.op(), c.data()).await?;
                Val::Unit
            }
            (SyncKind::Deque, c) => d.deque_op(cl, c.op(), 0).await?.map_or(Val::Nil, Val::Int),
            (_, c) => return Err(unsupported(cl, c)),
        },
        Structure::Ring | Structure::TStack => {
            let Endpoint::Token(t) = ep else { unreachable!("token structures use token endpoints") };
            let r = t.call(call.op(), call.data()).await?;
            if call.op().is_insert() {
                inserted(&r)
            } else {
                removed(&r)
            }
        }
        Structure::UList(l) => match call {
            Call::Insert(k) => bool_val(l.insert(cl, k, k).await?),
            Call::Search(k) => bool_val(l.search(cl, k).await?),
            Call::Delete(k) => bool_val(l.delete(cl, k).await?),
            c => return Err(unsupported(cl, c)),
        },
        Structure::SList(l) => match call {
            Call::Insert(k) => bool_val(l.insert(cl, k, k).await?),
            Call::Search(k) => bool_val(l.search(cl, k).await?),
            Call::Delete(k) => bool_val(l.delete(cl, k).await?),
            c => return Err(unsupported(cl, c)),
        },
        Structure::Manager(m) => match call {
            Call::Read(a) => Val::Int(m.read(cl, a).await?),
            Call::Write(a, v) => {
                m.write(cl, a, v).await?;
                Val::Unit
            }
            Call::Faa(a, d) => Val::Int(m.faa(cl, a, d).await?),
            Call::Swap(a, v) => Val::Int(m.swap(cl, a, v).await?),
            Call::Cas(a, o, n) => Val::Int(m.cas(cl, a, o, n).await?),
            Call::Gas(a, v) => Val::Int(m.get_and_set(cl, a, v).await?),
            Call::LazyCas(a, o, n) => Val::Bool(m.lazy_cas(cl, a, o, n).await? == Some(o)),
            Call::ReadSection(a) => {
                m.read_lock(cl, a).await?;
                let v = m.read(cl, a).await?;
                m.read_unlock(cl, a).await?;
                Val::Int(v)
            }
            Call::WriteSection(a, v) => {
                m.write_lock(cl, a).await?;
                m.write(cl, a, v).await?;
                m.write_unlock(cl, a).await?;
                Val::Unit
            }
            c => return Err(unsupported(cl, c)),
        },
    })
}

fn unsupported(cl: &Client, c: Call) -> simcore::SimError {
    simcore::SimError::Protocol { core: cl.id(), msg: format!("operation {c:?} does not apply to this structure") }
}

/// Core placement: island masters on the first core of each island, servers on the highest
/// free cores, clients on the remaining cores spread round-robin over the islands.
pub fn placement(setup: &Setup) -> Result<(Vec<CoreId>, Vec<CoreId>, Vec<CoreId>)> {
    let total = setup.islands * setup.cores;
    let masters = setup.masters();
    let taken: BTreeSet<CoreId> = masters.iter().copied().collect();
    let servers: Vec<CoreId> = (0..total).rev().filter(|c| !taken.contains(c)).take(setup.server_count()).collect();
    ensure!(servers.len() == setup.server_count(), "{total} cores cannot host {} servers", setup.server_count());
    let mut by_island: Vec<Vec<CoreId>> = (0..setup.islands)
        .map(|i| (i * setup.cores..(i + 1) * setup.cores).filter(|c| !taken.contains(c) && !servers.contains(c)).collect())
        .collect();
    let mut free = Vec::new();
    while by_island.iter().any(|v| !v.is_empty()) {
        for v in by_island.iter_mut().filter(|v| !v.is_empty()) {
            free.push(v.remove(0));
        }
    }
    let want = setup.clients.unwrap_or(free.len());
    ensure!(want >= 1 && want <= free.len(), "{want} clients requested but {} cores are free", free.len());
    free.truncate(want);
    free.sort_unstable();
    Ok((servers, masters, free))
}

/// Runs one script per client (in the order of the returned client list).
pub fn run(setup: &Setup, scripts: &[Vec<Call>]) -> Result<Outcome> {
    setup.check()?;
    let topo = Topology::new(setup.islands, setup.cores).context("topology")?;
    let mut cfg = SimConfig::new(topo, setup.seed).with_log(setup.log).with_max_steps(setup.max_steps);
    if setup.round_robin {
        cfg = cfg.round_robin();
    }
    let mut sim: Sim<Msg> = Sim::new(cfg)?;
    let (servers, masters, clients) = placement(setup)?;
    if scripts.len() != clients.len() {
        bail!("{} scripts for {} clients", scripts.len(), clients.len());
    }
    let (structure, snapshot) = spawn_structure(setup, &mut sim, &servers)?;
    let mut combine = BTreeSet::new();
    if let Structure::Dir(d, SyncKind::Stack | SyncKind::Queue) = &structure {
        combine.insert(d.sync);
    }
    let mcfg = MasterConfig { timer: setup.timer, cap: setup.batch_cap, elim: setup.elim, combine, dma: true };
    for &m in &masters {
        let c = mcfg.clone();
        sim.spawn(m, "master", true, move |ctx| run_master(ctx, c))?;
    }
    let rec = Recorder::new();
    let done = Rc::new(RefCell::new(0usize));
    for (i, (&core, script)) in clients.iter().zip(scripts).enumerate() {
        let st = structure.clone();
        let (rec, done, script) = (rec.clone(), done.clone(), script.clone());
        let master = masters.get(core / setup.cores).copied();
        let setup = setup.clone();
        let token_servers = servers.clone();
        let seed = setup.seed ^ ((i as u64 + 1) << 40);
        sim.spawn(core, "client", false, move |ctx: Ctx<Msg>| async move {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ep = match &st {
                Structure::Ring | Structure::TStack => {
                    let mut t = TokenClient::new(ctx.clone(), token_servers.clone());
                    if setup.scatter {
                        let n = token_servers.len();
                        let targets: Vec<usize> = (0..script.len()).map(|_| rng.gen_range(0..n)).collect();
                        t = t.with_script(targets);
                    }
                    Endpoint::Token(t)
                }
                _ if setup.ccsynch => Endpoint::Cc(CcClient::new(ctx.clone(), setup.ccsynch_h)),
                _ => Endpoint::Plain(Client::new(ctx.clone(), master)),
            };
            for call in script {
                if setup.work > 0 {
                    ctx.work(rng.gen_range(0..=setup.work)).await;
                }
                let (name, args) = call.record();
                rec.invoke(core, name, &args);
                let v = exec(&st, &ep, call).await?;
                rec.respond(core, v);
                *done.borrow_mut() += 1;
            }
            Ok(())
        })?;
    }
    let report = sim.run();
    let ops = *done.borrow();
    Ok(Outcome { report, history: rec.history(), servers, masters, clients, contents: snapshot(), ops })
}

/// Checks a history against the specification of `setup`'s structure, including its capacity.
pub fn check_history(setup: &Setup, h: &History, cap: usize) -> Result<CheckResult> {
    let ns = setup.servers;
    let k = setup.capacity.max(1);
    let bounded = |fixed: bool| if fixed { Capacity::exact(ns * k) } else { Capacity::UNBOUNDED };
    let r = match setup.algo.family() {
        Family::TStack => check_with_cap(h, &StackSpec { cap: Capacity::exact(ns * k) }, cap),
        Family::Ring(RingKind::Queue) => check_with_cap(h, &QueueSpec { cap: bounded(!setup.dynamic) }, cap),
        Family::Ring(RingKind::Deque) => check_with_cap(h, &DequeSpec { cap: bounded(!setup.dynamic) }, cap),
        Family::UList => check_with_cap(h, &SetSpec { allow_full: !setup.dynamic }, cap),
        Family::SList => check_with_cap(h, &SetSpec { allow_full: true }, cap),
        _ => verify::check_named(h, setup.algo.spec(), cap),
    }?;
    Ok(r)
}
