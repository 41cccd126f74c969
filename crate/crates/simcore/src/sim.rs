use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Debug;
use std::future::{poll_fn, Future};
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{CoreId, LogLevel, SchedMode, SimConfig, Topology};
use crate::log::{Event, EventKind, EventLog};
use crate::SimError;

pub type SimResult<T> = Result<T, SimError>;

/// Payload carried between simulated cores.
pub trait Message: Clone + Debug + 'static {
    /// Operation code, used for logging and receive filters.
    fn op(&self) -> &'static str;

    /// Size in abstract message units.
    fn units(&self) -> u32 {
        1
    }
}

#[derive(Clone, Debug)]
pub struct Envelope<M> {
    pub src: CoreId,
    pub dst: CoreId,
    pub msg: M,
    /// Global send sequence number.
    pub seq: u64,
    pub sent_at: u64,
}

/// A byte address in some core's local memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Loc {
    pub core: CoreId,
    pub addr: usize,
}

pub type DmaId = u64;

/// Contents of an island-local shared cell.
#[derive(Clone, Debug, Default)]
pub enum CellValue<M> {
    #[default]
    Nil,
    Int(i64),
    Msg(M),
}

impl<M> CellValue<M> {
    pub fn int(&self) -> i64 {
        match self {
            CellValue::Int(v) => *v,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stats {
    /// Envelopes delivered into each core's mailbox.
    pub delivered: Vec<u64>,
    /// Message units delivered into each core's mailbox.
    pub delivered_units: Vec<u64>,
    pub sent: Vec<u64>,
    pub dma_transfers: u64,
    pub dma_bytes: u64,
    pub max_mailbox_depth: usize,
    pub mailbox_overflows: u64,
}

#[derive(Debug)]
pub struct RunReport {
    pub steps: u64,
    pub truncated: bool,
    /// Non-daemon processes still blocked when the run went quiet.
    pub blocked: Vec<(CoreId, String)>,
    pub faults: Vec<(CoreId, SimError)>,
    pub log: EventLog,
    pub stats: Stats,
}

impl RunReport {
    /// True when every non-daemon process finished without fault.
    pub fn clean(&self) -> bool {
        !self.truncated && self.blocked.is_empty() && self.faults.is_empty()
    }

    pub fn diagnostic(&self) -> String {
        let tail: Vec<String> = self
            .log
            .events
            .iter()
            .rev()
            .take(20)
            .rev()
            .map(|e| e.csv_line())
            .collect();
        format!(
            "steps={} truncated={} blocked={:?} faults={:?}\nlog tail:\n{}",
            self.steps,
            self.truncated,
            self.blocked,
            self.faults,
            tail.join("\n")
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Hint {
    Runnable,
    Blocked { deadline: Option<u64> },
    Sleep(u64),
    Dma(DmaId),
}

struct Dma {
    id: DmaId,
    owner: CoreId,
    src: Loc,
    dst: Loc,
    len: usize,
    done: usize,
}

struct World<M> {
    cfg: SimConfig,
    now: u64,
    rng: ChaCha8Rng,
    seq: u64,
    inflight: BTreeMap<(u64, u64), Envelope<M>>,
    chan_last: HashMap<(CoreId, CoreId), u64>,
    mailboxes: Vec<VecDeque<Envelope<M>>>,
    dirty: Vec<bool>,
    mem: Vec<Vec<u8>>,
    dmas: Vec<Dma>,
    dma_done: Vec<Vec<DmaId>>,
    next_dma: DmaId,
    cells: Vec<BTreeMap<u64, CellValue<M>>>,
    log: Vec<Event>,
    stats: Stats,
    // per-poll bookkeeping
    acted: bool,
    hint: Hint,
}

impl<M: Message> World<M> {
    fn record(&mut self, kind: EventKind, src: Option<CoreId>, dst: Option<CoreId>, op: &str, detail: impl FnOnce() -> String) {
        let keep = match self.cfg.log {
            LogLevel::Off => false,
            LogLevel::Notes => kind == EventKind::Note,
            LogLevel::Full => true,
        };
        if keep {
            self.log.push(Event { step: self.now, kind, src, dst, op: op.to_string(), detail: detail() });
        }
    }

    fn delay(&mut self) -> u64 {
        match self.cfg.mode {
            SchedMode::RoundRobin => 1,
            SchedMode::RandomFair => self.rng.gen_range(1..=self.cfg.max_delay.max(1)),
        }
    }

    fn send(&mut self, src: CoreId, dst: CoreId, msg: M) -> SimResult<()> {
        self.cfg.topology.check(dst)?;
        let seq = self.seq;
        self.seq += 1;
        let d = self.delay();
        let at = {
            let last = self.chan_last.get(&(src, dst)).copied().unwrap_or(0);
            (self.now + d).max(last)
        };
        self.chan_last.insert((src, dst), at);
        self.record(EventKind::Send, Some(src), Some(dst), msg.op(), || format!("#{seq} {:?}", msg));
        self.stats.sent[src] += 1;
        self.inflight.insert((at, seq), Envelope { src, dst, msg, seq, sent_at: self.now });
        Ok(())
    }

    fn deliver_due(&mut self) {
        while let Some(entry) = self.inflight.first_entry() {
            if entry.key().0 > self.now {
                break;
            }
            let env = entry.remove();
            let dst = env.dst;
            self.record(EventKind::Deliver, Some(env.src), Some(dst), env.msg.op(), || format!("#{}", env.seq));
            self.stats.delivered[dst] += 1;
            self.stats.delivered_units[dst] += u64::from(env.msg.units());
            self.mailboxes[dst].push_back(env);
            let depth = self.mailboxes[dst].len();
            self.stats.max_mailbox_depth = self.stats.max_mailbox_depth.max(depth);
            if self.cfg.mailbox_bound.is_some_and(|b| depth > b) {
                self.stats.mailbox_overflows += 1;
            }
            self.dirty[dst] = true;
        }
    }

    fn tick_dma(&mut self) {
        let burst = self.cfg.dma_burst.max(1);
        let mut finished = Vec::new();
        for i in 0..self.dmas.len() {
            let (src, dst, off, n) = {
                let d = &self.dmas[i];
                let n = burst.min(d.len - d.done);
                (d.src, d.dst, d.done, n)
            };
            let chunk: Vec<u8> = self.mem[src.core][src.addr + off..src.addr + off + n].to_vec();
            self.mem[dst.core][dst.addr + off..dst.addr + off + n].copy_from_slice(&chunk);
            self.dmas[i].done += n;
            if self.dmas[i].done == self.dmas[i].len {
                finished.push(i);
            }
        }
        for i in finished.into_iter().rev() {
            let d = self.dmas.remove(i);
            self.finish_dma(d.id, d.owner, d.len);
        }
    }

    fn finish_dma(&mut self, id: DmaId, owner: CoreId, len: usize) {
        self.record(EventKind::DmaDone, None, Some(owner), "dma", || format!("id={id} len={len}"));
        self.dma_done[owner].push(id);
        self.dirty[owner] = true;
    }

    fn check_region(&self, loc: Loc, len: usize) -> SimResult<()> {
        self.cfg.topology.check(loc.core)?;
        if loc.addr.checked_add(len).is_none_or(|end| end > self.cfg.mem_bytes) {
            return Err(SimError::MemFault { core: loc.core, addr: loc.addr, len });
        }
        Ok(())
    }
}

type ProcFuture = Pin<Box<dyn Future<Output = SimResult<()>>>>;

struct Proc {
    core: CoreId,
    name: String,
    daemon: bool,
    fut: Option<ProcFuture>,
    hint: Hint,
    skipped: u32,
}

/// Handle a simulated process uses to talk to the machine.
pub struct Ctx<M> {
    me: CoreId,
    world: Rc<RefCell<World<M>>>,
}

impl<M> Clone for Ctx<M> {
    fn clone(&self) -> Self {
        Ctx { me: self.me, world: Rc::clone(&self.world) }
    }
}

impl<M: Message> Ctx<M> {
    pub fn me(&self) -> CoreId {
        self.me
    }

    pub fn topology(&self) -> Topology {
        self.world.borrow().cfg.topology
    }

    pub fn island(&self) -> usize {
        self.topology().island_of(self.me)
    }

    pub fn now(&self) -> u64 {
        self.world.borrow().now
    }

    pub fn config(&self) -> SimConfig {
        self.world.borrow().cfg.clone()
    }

    /// Waits for this step's action slot. Every primitive costs exactly one slot,
    /// so a process performs at most one send/receive/cell/DMA action per step.
    async fn slot(&self) {
        poll_fn(|_| {
            let mut w = self.world.borrow_mut();
            if w.acted {
                w.hint = Hint::Runnable;
                Poll::Pending
            } else {
                w.acted = true;
                Poll::Ready(())
            }
        })
        .await
    }

    pub async fn send(&self, dest: CoreId, msg: M) -> SimResult<()> {
        self.slot().await;
        self.world.borrow_mut().send(self.me, dest, msg)
    }

    /// Blocks until some pending envelope satisfies `pred`; returns the earliest such one.
    pub async fn recv_where(&self, pred: impl Fn(&Envelope<M>) -> bool) -> Envelope<M> {
        loop {
            if let Some(e) = self.recv_until(&pred, None).await {
                return e;
            }
        }
    }

    pub async fn recv(&self) -> Envelope<M> {
        self.recv_where(|_| true).await
    }

    pub async fn recv_from(&self, sender: CoreId) -> Envelope<M> {
        self.recv_where(move |e| e.src == sender).await
    }

    /// Like [`Ctx::recv_where`] but gives up at step `deadline`, returning `None`.
    pub async fn recv_until(&self, pred: impl Fn(&Envelope<M>) -> bool, deadline: Option<u64>) -> Option<Envelope<M>> {
        let me = self.me;
        poll_fn(|_| {
            let mut w = self.world.borrow_mut();
            if w.acted {
                w.hint = Hint::Runnable;
                return Poll::Pending;
            }
            if let Some(i) = w.mailboxes[me].iter().position(&pred) {
                w.acted = true;
                let env = w.mailboxes[me].remove(i).expect("index from position");
                w.record(EventKind::Recv, Some(env.src), Some(me), env.msg.op(), || format!("#{}", env.seq));
                return Poll::Ready(Some(env));
            }
            if deadline.is_some_and(|d| w.now >= d) {
                return Poll::Ready(None);
            }
            w.hint = Hint::Blocked { deadline };
            Poll::Pending
        })
        .await
    }

    /// Non-blocking probe of the mailbox; costs no step.
    pub fn pending(&self, pred: impl Fn(&Envelope<M>) -> bool) -> bool {
        self.world.borrow().mailboxes[self.me].iter().any(pred)
    }

    /// Local busywork: the process stays idle for `steps` scheduler steps.
    pub async fn work(&self, steps: u64) {
        if steps == 0 {
            return;
        }
        let until = self.now() + steps;
        poll_fn(|_| {
            let mut w = self.world.borrow_mut();
            if w.now >= until {
                Poll::Ready(())
            } else {
                w.hint = Hint::Sleep(until);
                Poll::Pending
            }
        })
        .await
    }

    /// Records an audit note in the event log; costs no step.
    pub fn note(&self, tag: &str, detail: impl FnOnce() -> String) {
        self.world.borrow_mut().record(EventKind::Note, Some(self.me), None, tag, detail);
    }

    pub async fn mem_write(&self, loc: Loc, bytes: &[u8]) -> SimResult<()> {
        self.slot().await;
        let mut w = self.world.borrow_mut();
        w.check_region(loc, bytes.len())?;
        w.mem[loc.core][loc.addr..loc.addr + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    pub async fn mem_read(&self, loc: Loc, len: usize) -> SimResult<Vec<u8>> {
        self.slot().await;
        let w = self.world.borrow();
        w.check_region(loc, len)?;
        Ok(w.mem[loc.core][loc.addr..loc.addr + len].to_vec())
    }

    /// Starts a non-atomic copy. The engine moves one burst per step; the transfer
    /// completes after `ceil(len / burst)` steps. A zero-length copy completes at once.
    pub async fn dma_start(&self, src: Loc, dst: Loc, len: usize) -> SimResult<DmaId> {
        self.slot().await;
        let mut w = self.world.borrow_mut();
        w.check_region(src, len)?;
        w.check_region(dst, len)?;
        let id = w.next_dma;
        w.next_dma += 1;
        w.stats.dma_transfers += 1;
        w.stats.dma_bytes += len as u64;
        let me = self.me;
        w.record(EventKind::DmaStart, Some(src.core), Some(dst.core), "dma", || format!("id={id} len={len} by={me}"));
        if len == 0 {
            w.finish_dma(id, me, 0);
        } else {
            w.dmas.push(Dma { id, owner: me, src, dst, len, done: 0 });
        }
        Ok(id)
    }

    /// Blocks until the completion notification for `id` arrives.
    pub async fn dma_wait(&self, id: DmaId) {
        let me = self.me;
        poll_fn(|_| {
            let mut w = self.world.borrow_mut();
            if let Some(i) = w.dma_done[me].iter().position(|d| *d == id) {
                w.dma_done[me].swap_remove(i);
                Poll::Ready(())
            } else {
                w.hint = Hint::Dma(id);
                Poll::Pending
            }
        })
        .await
    }

    pub async fn dma_copy(&self, src: Loc, dst: Loc, len: usize) -> SimResult<()> {
        let id = self.dma_start(src, dst, len).await?;
        self.dma_wait(id).await;
        Ok(())
    }

    async fn cell_op<R>(&self, id: u64, op: &'static str, f: impl FnOnce(&mut CellValue<M>) -> R) -> R {
        self.slot().await;
        let mut w = self.world.borrow_mut();
        let island = w.cfg.topology.island_of(self.me);
        let cell = w.cells[island].entry(id).or_default();
        let r = f(cell);
        let me = self.me;
        w.record(EventKind::Cell, Some(me), None, op, || format!("island={island} cell={id}"));
        r
    }

    /// Island-local shared cells. Each access is one atomic step and is visible only
    /// to processes on the caller's island.
    pub async fn cell_read(&self, id: u64) -> CellValue<M> {
        self.cell_op(id, "cell_read", |c| c.clone()).await
    }

    pub async fn cell_write(&self, id: u64, v: CellValue<M>) {
        self.cell_op(id, "cell_write", |c| *c = v).await
    }

    pub async fn cell_swap(&self, id: u64, v: CellValue<M>) -> CellValue<M> {
        self.cell_op(id, "cell_swap", |c| std::mem::replace(c, v)).await
    }

    /// Integer compare-and-swap on a cell; `Nil` compares equal to 0.
    pub async fn cell_cas(&self, id: u64, expected: i64, new: i64) -> bool {
        self.cell_op(id, "cell_cas", |c| {
            if c.int() == expected {
                *c = CellValue::Int(new);
                true
            } else {
                false
            }
        })
        .await
    }
}

/// The simulator: owns the world and the registered processes.
pub struct Sim<M> {
    world: Rc<RefCell<World<M>>>,
    procs: Vec<Proc>,
    faults: Vec<(CoreId, SimError)>,
}

impl<M: Message> Sim<M> {
    pub fn new(cfg: SimConfig) -> SimResult<Self> {
        let topo = Topology::new(cfg.topology.islands, cfg.topology.cores_per_island)?;
        if cfg.max_delay == 0 {
            return Err(SimError::Config("max_delay must be at least 1".into()));
        }
        let n = topo.total();
        let world = World {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            now: 0,
            seq: 0,
            inflight: BTreeMap::new(),
            chan_last: HashMap::new(),
            mailboxes: (0..n).map(|_| VecDeque::new()).collect(),
            dirty: vec![false; n],
            mem: vec![vec![0; cfg.mem_bytes]; n],
            dmas: Vec::new(),
            dma_done: vec![Vec::new(); n],
            next_dma: 0,
            cells: (0..topo.islands).map(|_| BTreeMap::new()).collect(),
            log: Vec::new(),
            stats: Stats {
                delivered: vec![0; n],
                delivered_units: vec![0; n],
                sent: vec![0; n],
                ..Stats::default()
            },
            acted: false,
            hint: Hint::Runnable,
            cfg,
        };
        Ok(Sim { world: Rc::new(RefCell::new(world)), procs: Vec::new(), faults: Vec::new() })
    }

    pub fn topology(&self) -> Topology {
        self.world.borrow().cfg.topology
    }

    pub fn ctx(&self, core: CoreId) -> Ctx<M> {
        Ctx { me: core, world: Rc::clone(&self.world) }
    }

    /// Registers a process on `core`. Daemons (servers) may stay blocked forever
    /// without being reported as deadlocked.
    pub fn spawn<F, Fut>(&mut self, core: CoreId, name: &str, daemon: bool, body: F) -> SimResult<()>
    where
        F: FnOnce(Ctx<M>) -> Fut,
        Fut: Future<Output = SimResult<()>> + 'static,
    {
        self.topology().check(core)?;
        if self.procs.iter().any(|p| p.core == core) {
            return Err(SimError::Config(format!("core {core} already hosts a process")));
        }
        let fut: ProcFuture = Box::pin(body(self.ctx(core)));
        self.procs.push(Proc { core, name: name.to_string(), daemon, fut: Some(fut), hint: Hint::Runnable, skipped: 0 });
        Ok(())
    }

    /// Writes directly into a core's memory before the run starts.
    pub fn preload(&mut self, loc: Loc, bytes: &[u8]) -> SimResult<()> {
        let mut w = self.world.borrow_mut();
        w.check_region(loc, bytes.len())?;
        w.mem[loc.core][loc.addr..loc.addr + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    pub fn memory(&self, loc: Loc, len: usize) -> Vec<u8> {
        self.world.borrow().mem[loc.core][loc.addr..loc.addr + len].to_vec()
    }

    fn wakeable(&self, p: &Proc, w: &World<M>) -> bool {
        if p.fut.is_none() {
            return false;
        }
        match p.hint {
            Hint::Runnable => true,
            Hint::Blocked { deadline } => w.dirty[p.core] || deadline.is_some_and(|d| w.now >= d),
            Hint::Sleep(t) => w.now >= t,
            Hint::Dma(id) => w.dma_done[p.core].contains(&id),
        }
    }

    fn next_wakeup(&self, w: &World<M>) -> Option<u64> {
        let mut t: Option<u64> = w.inflight.keys().next().map(|k| k.0);
        let mut consider = |x: u64| t = Some(t.map_or(x, |y| y.min(x)));
        if !w.dmas.is_empty() {
            consider(w.now + 1);
        }
        for p in self.procs.iter().filter(|p| p.fut.is_some()) {
            match p.hint {
                Hint::Sleep(s) => consider(s),
                Hint::Blocked { deadline: Some(d) } => consider(d),
                _ => {}
            }
        }
        t
    }

    fn poll_proc(&mut self, i: usize, waker: &Waker) {
        let core = self.procs[i].core;
        {
            let mut w = self.world.borrow_mut();
            w.acted = false;
            w.hint = Hint::Runnable;
            w.dirty[core] = false;
        }
        let mut cx = Context::from_waker(waker);
        let fut = self.procs[i].fut.as_mut().expect("polled a finished process");
        match fut.as_mut().poll(&mut cx) {
            Poll::Ready(res) => {
                self.procs[i].fut = None;
                if let Err(e) = res {
                    self.faults.push((core, e));
                }
            }
            Poll::Pending => {
                self.procs[i].hint = self.world.borrow().hint;
            }
        }
    }

    /// Runs until no step is enabled and nothing is in flight, or until `max_steps`.
    pub fn run(mut self) -> RunReport {
        let waker = Waker::noop();
        let max_steps = self.world.borrow().cfg.max_steps;
        let mode = self.world.borrow().cfg.mode;
        let mut truncated = false;
        loop {
            {
                let mut w = self.world.borrow_mut();
                if w.now >= max_steps {
                    truncated = true;
                    break;
                }
                w.deliver_due();
                if !w.dmas.is_empty() {
                    w.tick_dma();
                }
            }
            let mut ready: Vec<usize> = {
                let w = self.world.borrow();
                (0..self.procs.len()).filter(|&i| self.wakeable(&self.procs[i], &w)).collect()
            };
            if ready.is_empty() {
                let mut w = self.world.borrow_mut();
                match self.next_wakeup(&w) {
                    Some(t) => {
                        w.now = t.max(w.now + 1);
                        continue;
                    }
                    None => break,
                }
            }
            if mode == SchedMode::RandomFair {
                let mut w = self.world.borrow_mut();
                ready.shuffle(&mut w.rng);
                let procs = &mut self.procs;
                ready.retain(|&i| {
                    let p = &mut procs[i];
                    if p.skipped < 2 && w.rng.gen_bool(0.25) {
                        p.skipped += 1;
                        false
                    } else {
                        p.skipped = 0;
                        true
                    }
                });
            }
            for i in ready {
                self.poll_proc(i, waker);
            }
            self.world.borrow_mut().now += 1;
        }
        let mut w = self.world.borrow_mut();
        let blocked = self
            .procs
            .iter()
            .filter(|p| p.fut.is_some() && !p.daemon)
            .map(|p| (p.core, p.name.clone()))
            .collect();
        RunReport {
            steps: w.now,
            truncated,
            blocked,
            faults: std::mem::take(&mut self.faults),
            log: EventLog { events: std::mem::take(&mut w.log), truncated },
            stats: std::mem::take(&mut w.stats),
        }
    }
}
