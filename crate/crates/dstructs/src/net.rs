//! Request/reply plumbing shared by all structures: client routing (direct or through
//! an island master), the island master itself, and [`ServerIo`], which lets server
//! loops consume batched requests exactly as if they had arrived one by one.

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::rc::Rc;

use simcore::{CoreId, Ctx, Envelope, Loc, SimError, SimResult};
use verify::{History, Val};

use crate::msg::{Msg, Op, Reply, Req};

/// `Reply::aux` marker for requests answered by elimination at the island master.
pub const ELIMINATED: i64 = 1;

/// A client process's endpoint.
pub struct Client {
    pub ctx: Ctx<Msg>,
    master: Option<CoreId>,
    seq: Cell<u64>,
}

impl Client {
    pub fn new(ctx: Ctx<Msg>, master: Option<CoreId>) -> Self {
        Client { ctx, master, seq: Cell::new(0) }
    }

    pub fn id(&self) -> CoreId {
        self.ctx.me()
    }

    /// A fresh request carrying this client's id and next sequence number.
    pub fn req(&self, op: Op) -> Req {
        let s = self.seq.get() + 1;
        self.seq.set(s);
        Req::new(op, self.id(), s)
    }

    /// Sends toward `dest`, through the island master when one is configured.
    pub async fn send(&self, dest: CoreId, req: Req) -> SimResult<()> {
        match self.master {
            Some(m) => self.ctx.send(m, Msg::Up { dest, req }).await,
            None => self.ctx.send(dest, Msg::Req(req)).await,
        }
    }

    pub async fn wait(&self, seq: u64) -> Reply {
        let me = self.id();
        let env = self.ctx.recv_where(|e| matches!(&e.msg, Msg::Reply(r) if r.cid == me && r.seq == seq)).await;
        match env.msg {
            Msg::Reply(r) => r,
            _ => unreachable!("filtered on replies"),
        }
    }

    pub async fn call(&self, dest: CoreId, req: Req) -> SimResult<Reply> {
        let seq = req.seq;
        self.send(dest, req).await?;
        Ok(self.wait(seq).await)
    }
}

/// Shared operation history written by client processes.
#[derive(Clone, Default)]
pub struct Recorder(Rc<RefCell<History>>);

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn invoke(&self, pid: CoreId, op: &str, args: &[i64]) {
        self.0.borrow_mut().invoke(pid, op, args).expect("client invokes with no open operation");
    }

    pub fn respond(&self, pid: CoreId, v: Val) {
        self.0.borrow_mut().respond(pid, v).expect("client responds to its open operation");
    }

    pub fn history(&self) -> History {
        self.0.borrow().clone()
    }
}

/// Converts a reply to a history value for removal operations.
pub fn removed(r: &Reply) -> Val {
    if r.ok {
        Val::Int(r.data)
    } else {
        Val::Nil
    }
}

pub fn inserted(r: &Reply) -> Val {
    if r.ok {
        Val::Unit
    } else {
        Val::Full
    }
}

/// Batching layer configuration for island masters.
#[derive(Clone, Debug)]
pub struct MasterConfig {
    /// Flush period in steps.
    pub timer: u64,
    /// A buffer reaching this many requests is flushed immediately.
    pub cap: usize,
    /// Pair opposite operations locally before flushing.
    pub elim: bool,
    /// Destinations that accept combined counters instead of request batches.
    pub combine: BTreeSet<CoreId>,
    /// Use DMA for batches larger than `4 * mms` units.
    pub dma: bool,
}

impl Default for MasterConfig {
    fn default() -> Self {
        MasterConfig { timer: 8, cap: 16, elim: false, combine: BTreeSet::new(), dma: true }
    }
}

/// DMA batch slots per (master, server) pair.
pub const DMA_SLOTS: usize = 4;
/// Largest batch that fits a DMA slot.
pub const SLOT_REQS: usize = 32;
const SLOT_BYTES: usize = SLOT_REQS * Req::WIRE_BYTES;

fn slot_addr(master_island: usize, slot: usize) -> usize {
    (master_island * DMA_SLOTS + slot) * SLOT_BYTES
}

#[derive(Default)]
struct Buffers {
    /// (dest, class) -> requests with their arrival order.
    bufs: BTreeMap<(CoreId, u8), Vec<(u64, Req)>>,
    arrivals: u64,
    oldest: Option<u64>,
}

impl Buffers {
    fn is_empty(&self) -> bool {
        self.bufs.values().all(Vec::is_empty)
    }

    fn len(&self, key: (CoreId, u8)) -> usize {
        self.bufs.get(&key).map_or(0, Vec::len)
    }
}

/// Island master loop. Runs forever as a daemon.
pub async fn run_master(ctx: Ctx<Msg>, cfg: MasterConfig) -> SimResult<()> {
    let me = ctx.me();
    let island = ctx.island();
    let mms = ctx.config().costs.mms as usize;
    let mut b = Buffers::default();
    let mut free_slots: BTreeMap<CoreId, Vec<bool>> = BTreeMap::new();
    let mut pending: BTreeMap<u64, (Vec<Req>, Vec<Req>)> = BTreeMap::new();
    let mut mseq = 0u64;
    loop {
        let deadline = b.oldest.map(|t| t + cfg.timer);
        // at the deadline keep absorbing queued client requests, but never past a second period
        let due = deadline.is_some_and(|d| {
            let now = ctx.now();
            now >= d && (now >= d + cfg.timer || !ctx.pending(|e| matches!(e.msg, Msg::Up { .. })))
        });
        let env = if due { None } else { ctx.recv_until(|_| true, deadline).await };
        let Some(env) = env else {
            flush(&ctx, &cfg, &mut b, None, &mut free_slots, &mut pending, &mut mseq, island, mms).await?;
            continue;
        };
        match env.msg {
            Msg::Up { dest, req } => {
                let class = req.op.is_remove() as u8;
                b.arrivals += 1;
                b.bufs.entry((dest, class)).or_default().push((b.arrivals, req));
                b.oldest.get_or_insert(ctx.now());
                if b.len((dest, class)) >= cfg.cap {
                    flush(&ctx, &cfg, &mut b, Some(dest), &mut free_slots, &mut pending, &mut mseq, island, mms).await?;
                }
            }
            Msg::BatchReply { slot, replies } => {
                if let Some(s) = slot {
                    free_slots.entry(env.src).or_insert_with(|| vec![true; DMA_SLOTS])[s] = true;
                }
                for r in replies {
                    ctx.send(r.cid, Msg::Reply(r)).await?;
                }
            }
            Msg::Grant { seq, insert_keys, remove_keys } => {
                let (ins, rem) = pending.remove(&seq).ok_or_else(|| SimError::Protocol {
                    core: me,
                    msg: format!("grant for unknown combine {seq}"),
                })?;
                for (r, k) in ins.iter().zip(insert_keys) {
                    ctx.send(r.cid, Msg::Reply(r.reply(true, k))).await?;
                }
                for (r, k) in rem.iter().zip(remove_keys) {
                    ctx.send(r.cid, Msg::Reply(r.reply(k.is_some(), k.unwrap_or(-1)))).await?;
                }
            }
            other => {
                return Err(SimError::Protocol { core: me, msg: format!("master got unexpected {other:?}") });
            }
        }
    }
}

/// Client-tagged request queued at a master.
pub type Tagged = (u64, Req);

/// Greedy FIFO pairing of opposite operations on the same end. Returns (pairs, residual).
pub fn eliminate(reqs: Vec<Tagged>) -> (Vec<(Req, Req)>, Vec<Tagged>) {
    let mut pairs = Vec::new();
    let mut residual: Vec<(u64, Req)> = Vec::new();
    for (t, r) in reqs {
        let partner = r.op.partner();
        let hit = residual.iter().position(|(_, q)| Some(q.op) == partner);
        match hit {
            Some(i) => {
                let (_, q) = residual.remove(i);
                if q.op.is_insert() {
                    pairs.push((q, r));
                } else {
                    pairs.push((r, q));
                }
            }
            None => residual.push((t, r)),
        }
    }
    (pairs, residual)
}

#[allow(clippy::too_many_arguments)]
async fn flush(
    ctx: &Ctx<Msg>,
    cfg: &MasterConfig,
    b: &mut Buffers,
    only: Option<CoreId>,
    free_slots: &mut BTreeMap<CoreId, Vec<bool>>,
    pending: &mut BTreeMap<u64, (Vec<Req>, Vec<Req>)>,
    mseq: &mut u64,
    island: usize,
    mms: usize,
) -> SimResult<()> {
    let me = ctx.me();
    let dests: BTreeSet<CoreId> = b.bufs.keys().map(|k| k.0).filter(|d| only.is_none_or(|o| o == *d)).collect();
    for dest in dests {
        let mut all: Vec<(u64, Req)> = Vec::new();
        for class in 0..2u8 {
            all.extend(b.bufs.remove(&(dest, class)).unwrap_or_default());
        }
        all.sort_by_key(|(t, _)| *t);
        if cfg.elim {
            let (pairs, residual) = eliminate(all);
            ctx.note("eliminate", || format!("dest={dest} pairs={}", pairs.len()));
            for (ins, rem) in pairs {
                ctx.send(ins.cid, Msg::Reply(ins.reply(true, 0).aux(ELIMINATED))).await?;
                ctx.send(rem.cid, Msg::Reply(rem.reply(true, ins.data).aux(ELIMINATED))).await?;
            }
            all = residual;
        }
        if all.is_empty() {
            continue;
        }
        if cfg.combine.contains(&dest) {
            let (ins, rem): (Vec<Req>, Vec<Req>) = all.into_iter().map(|(_, r)| r).partition(|r| r.op.is_insert());
            *mseq += 1;
            let req = Req::new(Op::Combine, me, *mseq).key(ins.len() as i64).aux(rem.len() as i64);
            pending.insert(*mseq, (ins, rem));
            ctx.send(dest, Msg::Req(req)).await?;
            continue;
        }
        for class in 0..2u8 {
            let reqs: Vec<Req> = all.iter().filter(|(_, r)| r.op.is_remove() as u8 == class).map(|(_, r)| r.clone()).collect();
            for chunk in reqs.chunks(SLOT_REQS) {
                send_batch(ctx, cfg, dest, chunk.to_vec(), free_slots, island, mms).await?;
            }
        }
    }
    if b.is_empty() {
        b.oldest = None;
    }
    Ok(())
}

async fn send_batch(
    ctx: &Ctx<Msg>,
    cfg: &MasterConfig,
    dest: CoreId,
    reqs: Vec<Req>,
    free_slots: &mut BTreeMap<CoreId, Vec<bool>>,
    island: usize,
    mms: usize,
) -> SimResult<()> {
    if reqs.is_empty() {
        return Ok(());
    }
    let me = ctx.me();
    let slots = free_slots.entry(dest).or_insert_with(|| vec![true; DMA_SLOTS]);
    let slot = slots.iter().position(|f| *f);
    match slot {
        Some(slot) if cfg.dma && reqs.len() > 4 * mms => {
            slots[slot] = false;
            let mut bytes = Vec::with_capacity(reqs.len() * Req::WIRE_BYTES);
            for r in &reqs {
                r.encode(&mut bytes);
            }
            let staging = Loc { core: me, addr: 0 };
            ctx.mem_write(staging, &bytes).await?;
            ctx.dma_copy(staging, Loc { core: dest, addr: slot_addr(island, slot) }, bytes.len()).await?;
            ctx.send(dest, Msg::BatchDma { master: me, slot, count: reqs.len() }).await
        }
        _ => ctx.send(dest, Msg::Batch { master: me, reqs }).await,
    }
}

struct BatchCtx {
    master: CoreId,
    slot: Option<usize>,
    remaining: usize,
    open: BTreeSet<CoreId>,
    replies: Vec<Reply>,
}

/// Server-side endpoint. Batches are unpacked transparently; replies to clients of the
/// batch being processed are collected into one `BatchReply` to its master, every other
/// reply goes straight to the client.
pub struct ServerIo {
    pub ctx: Ctx<Msg>,
    local: VecDeque<(CoreId, Msg, Option<u64>)>,
    batches: BTreeMap<u64, BatchCtx>,
    next_batch: u64,
}

impl ServerIo {
    pub fn new(ctx: Ctx<Msg>) -> Self {
        ServerIo { ctx, local: VecDeque::new(), batches: BTreeMap::new(), next_batch: 0 }
    }

    pub fn me(&self) -> CoreId {
        self.ctx.me()
    }

    async fn flush_done(&mut self) -> SimResult<()> {
        let done: Vec<u64> = self.batches.iter().filter(|(_, b)| b.remaining == 0).map(|(k, _)| *k).collect();
        for k in done {
            let b = self.batches.remove(&k).expect("listed");
            if !b.replies.is_empty() || b.slot.is_some() {
                self.ctx.send(b.master, Msg::BatchReply { slot: b.slot, replies: b.replies }).await?;
            }
        }
        Ok(())
    }

    fn take_local(&mut self, pred: &impl Fn(&Msg) -> bool) -> Option<(CoreId, Msg)> {
        let i = self.local.iter().position(|(_, m, _)| pred(m))?;
        let (src, m, batch) = self.local.remove(i).expect("index from position");
        if let Some(b) = batch.and_then(|k| self.batches.get_mut(&k)) {
            b.remaining -= 1;
        }
        Some((src, m))
    }

    async fn unpack(&mut self, env: Envelope<Msg>) -> SimResult<()> {
        let (master, slot, reqs) = match env.msg {
            Msg::Batch { master, reqs } => (master, None, reqs),
            Msg::BatchDma { master, slot, count } => {
                let island = self.ctx.topology().island_of(master);
                let bytes = self.ctx.mem_read(Loc { core: self.me(), addr: slot_addr(island, slot) }, count * Req::WIRE_BYTES).await?;
                let reqs = bytes
                    .chunks(Req::WIRE_BYTES)
                    .map(|c| {
                        Req::decode(c).ok_or_else(|| SimError::Protocol { core: self.ctx.me(), msg: "corrupt DMA batch".into() })
                    })
                    .collect::<SimResult<Vec<_>>>()?;
                (master, Some(slot), reqs)
            }
            _ => unreachable!("only batches are unpacked"),
        };
        let k = self.next_batch;
        self.next_batch += 1;
        let open = reqs.iter().map(|r| r.cid).collect();
        self.batches.insert(k, BatchCtx { master, slot, remaining: reqs.len(), open, replies: Vec::new() });
        for r in reqs {
            self.local.push_back((r.cid, Msg::Req(r), Some(k)));
        }
        Ok(())
    }

    /// Next message satisfying `pred`, or `None` once `deadline` passes.
    pub async fn next_until(&mut self, pred: impl Fn(&Msg) -> bool, deadline: Option<u64>) -> SimResult<Option<(CoreId, Msg)>> {
        self.flush_done().await?;
        loop {
            if let Some(hit) = self.take_local(&pred) {
                return Ok(Some(hit));
            }
            let env = self
                .ctx
                .recv_until(|e| matches!(e.msg, Msg::Batch { .. } | Msg::BatchDma { .. }) || pred(&e.msg), deadline)
                .await;
            match env {
                None => return Ok(None),
                Some(e) if matches!(e.msg, Msg::Batch { .. } | Msg::BatchDma { .. }) => self.unpack(e).await?,
                Some(e) => return Ok(Some((e.src, e.msg))),
            }
        }
    }

    pub async fn next_where(&mut self, pred: impl Fn(&Msg) -> bool) -> SimResult<(CoreId, Msg)> {
        Ok(self.next_until(pred, None).await?.expect("no deadline"))
    }

    pub async fn next(&mut self) -> SimResult<(CoreId, Msg)> {
        self.next_where(|_| true).await
    }

    /// True if a message satisfying `pred` is waiting, locally or in the mailbox.
    pub fn has_pending(&self, pred: impl Fn(&Msg) -> bool) -> bool {
        self.local.iter().any(|(_, m, _)| pred(m)) || self.ctx.pending(|e| pred(&e.msg))
    }

    pub async fn reply(&mut self, r: Reply) -> SimResult<()> {
        if let Some(b) = self.batches.values_mut().find(|b| b.open.contains(&r.cid)) {
            b.open.remove(&r.cid);
            b.replies.push(r);
            return Ok(());
        }
        self.ctx.send(r.cid, Msg::Reply(r)).await
    }

    pub async fn send(&self, dest: CoreId, m: Msg) -> SimResult<()> {
        self.ctx.send(dest, m).await
    }
}
