//! Manager-based atomic primitives and readers-writers monitors with writer priority.

use std::collections::{BTreeMap, VecDeque};

use simcore::{CoreId, Sim, SimError, SimResult};

use crate::msg::{Msg, Op, Req};
use crate::net::{Client, ServerIo};

/// Client handle. Cells and monitors are sharded over the managers by id.
#[derive(Clone, Debug)]
pub struct Manager {
    pub servers: Vec<CoreId>,
    /// After this many consecutive writer grants with readers waiting, readers go first once.
    pub fairness: Option<usize>,
}

impl Manager {
    pub fn new(servers: Vec<CoreId>) -> Self {
        Manager { servers, fairness: None }
    }

    pub fn with_fairness(mut self, writers: usize) -> Self {
        self.fairness = Some(writers.max(1));
        self
    }

    pub fn home(&self, id: i64) -> CoreId {
        self.servers[id.rem_euclid(self.servers.len() as i64) as usize]
    }

    pub fn spawn(&self, sim: &mut Sim<Msg>) -> SimResult<()> {
        for &core in &self.servers {
            let fairness = self.fairness;
            sim.spawn(core, "manager", true, move |ctx| run_manager(ServerIo::new(ctx), fairness))?;
        }
        Ok(())
    }

    async fn op(&self, cl: &Client, op: Op, id: i64, a: i64, b: i64) -> SimResult<(bool, i64)> {
        let r = cl.call(self.home(id), cl.req(op).key(id).data(a).aux(b)).await?;
        Ok((r.ok, r.data))
    }

    pub async fn read(&self, cl: &Client, cell: i64) -> SimResult<i64> {
        Ok(self.op(cl, Op::Rd, cell, 0, 0).await?.1)
    }

    pub async fn write(&self, cl: &Client, cell: i64, v: i64) -> SimResult<()> {
        self.op(cl, Op::Wr, cell, v, 0).await.map(|_| ())
    }

    /// Adds `delta` and returns the new value.
    pub async fn faa(&self, cl: &Client, cell: i64, delta: i64) -> SimResult<i64> {
        Ok(self.op(cl, Op::Faa, cell, delta, 0).await?.1)
    }

    /// Stores `v` and returns the previous value.
    pub async fn swap(&self, cl: &Client, cell: i64, v: i64) -> SimResult<i64> {
        Ok(self.op(cl, Op::Swp, cell, v, 0).await?.1)
    }

    /// Replaces `old` by `new` if present; returns the value found.
    pub async fn cas(&self, cl: &Client, cell: i64, old: i64, new: i64) -> SimResult<i64> {
        Ok(self.op(cl, Op::Cas, cell, old, new).await?.1)
    }

    pub async fn read_lock(&self, cl: &Client, mon: i64) -> SimResult<()> {
        self.op(cl, Op::Rl, mon, 0, 0).await.map(|_| ())
    }

    pub async fn read_unlock(&self, cl: &Client, mon: i64) -> SimResult<()> {
        self.op(cl, Op::Ru, mon, 0, 0).await.map(|_| ())
    }

    pub async fn write_lock(&self, cl: &Client, mon: i64) -> SimResult<()> {
        self.op(cl, Op::Wl, mon, 0, 0).await.map(|_| ())
    }

    pub async fn write_unlock(&self, cl: &Client, mon: i64) -> SimResult<()> {
        self.op(cl, Op::Wu, mon, 0, 0).await.map(|_| ())
    }

    /// Write lock granted only if the monitor is entirely free; never queues.
    pub async fn try_lock(&self, cl: &Client, mon: i64) -> SimResult<bool> {
        Ok(self.op(cl, Op::Tl, mon, 0, 0).await?.0)
    }

    /// Swap composed from the monitor of the same id: write lock, read, write, unlock.
    pub async fn get_and_set(&self, cl: &Client, cell: i64, v: i64) -> SimResult<i64> {
        self.write_lock(cl, cell).await?;
        let old = self.read(cl, cell).await?;
        self.write(cl, cell, v).await?;
        self.write_unlock(cl, cell).await?;
        Ok(old)
    }

    /// CAS that gives up with `None` when the cell's monitor is owned by someone else.
    pub async fn lazy_cas(&self, cl: &Client, cell: i64, old: i64, new: i64) -> SimResult<Option<i64>> {
        if !self.try_lock(cl, cell).await? {
            return Ok(None);
        }
        let found = self.read(cl, cell).await?;
        if found == old {
            self.write(cl, cell, new).await?;
        }
        self.write_unlock(cl, cell).await?;
        Ok(Some(found))
    }
}

#[derive(Default)]
struct Monitor {
    readers: usize,
    writer: Option<CoreId>,
    rq: VecDeque<Req>,
    wq: VecDeque<Req>,
    /// Writer grants in a row while readers were queued.
    streak: usize,
}

async fn grant(io: &mut ServerIo, r: Req, kind: &str) -> SimResult<()> {
    let (mon, cid) = (r.key, r.cid);
    io.ctx.note("rw", || format!("grant kind={kind} mon={mon} cid={cid}"));
    io.reply(r.reply(true, 0)).await
}

async fn admit_next(io: &mut ServerIo, m: &mut Monitor, fairness: Option<usize>) -> SimResult<()> {
    if m.writer.is_some() || m.readers > 0 {
        return Ok(());
    }
    let readers_turn = !m.rq.is_empty() && fairness.is_some_and(|f| m.streak >= f);
    if !m.wq.is_empty() && !readers_turn {
        let w = m.wq.pop_front().expect("non-empty");
        m.writer = Some(w.cid);
        m.streak = if m.rq.is_empty() { 0 } else { m.streak + 1 };
        return grant(io, w, "write").await;
    }
    m.streak = 0;
    while let Some(r) = m.rq.pop_front() {
        m.readers += 1;
        grant(io, r, "read").await?;
    }
    Ok(())
}

async fn run_manager(mut io: ServerIo, fairness: Option<usize>) -> SimResult<()> {
    let mut cells: BTreeMap<i64, i64> = BTreeMap::new();
    let mut mons: BTreeMap<i64, Monitor> = BTreeMap::new();
    loop {
        let (_, msg) = io.next().await?;
        let Msg::Req(r) = msg else {
            return Err(SimError::Protocol { core: io.me(), msg: format!("manager got {msg:?}") });
        };
        if matches!(r.op, Op::Rl | Op::Ru | Op::Wl | Op::Wu | Op::Tl) {
            let (op, mon, cid) = (r.op.name(), r.key, r.cid);
            io.ctx.note("rw", || format!("arrive op={op} mon={mon} cid={cid}"));
        }
        let v = cells.entry(r.key).or_default();
        match r.op {
            Op::Rd => io.reply(r.reply(true, *v)).await?,
            Op::Wr => {
                *v = r.data;
                io.reply(r.reply(true, 0)).await?;
            }
            Op::Faa => {
                *v += r.data;
                io.reply(r.reply(true, *v)).await?;
            }
            Op::Swp => {
                let old = std::mem::replace(v, r.data);
                io.reply(r.reply(true, old)).await?;
            }
            Op::Cas => {
                let old = *v;
                if old == r.data {
                    *v = r.aux;
                }
                io.reply(r.reply(old == r.data, old)).await?;
            }
            Op::Rl => {
                let m = mons.entry(r.key).or_default();
                if m.writer.is_none() && m.wq.is_empty() {
                    m.readers += 1;
                    grant(&mut io, r, "read").await?;
                } else {
                    m.rq.push_back(r);
                }
            }
            Op::Wl => {
                let m = mons.entry(r.key).or_default();
                m.wq.push_back(r);
                admit_next(&mut io, m, fairness).await?;
            }
            Op::Tl => {
                let m = mons.entry(r.key).or_default();
                let free = m.writer.is_none() && m.readers == 0 && m.wq.is_empty() && m.rq.is_empty();
                if free {
                    m.writer = Some(r.cid);
                    grant(&mut io, r, "write").await?;
                } else {
                    let (mon, cid) = (r.key, r.cid);
                    io.ctx.note("rw", || format!("refuse mon={mon} cid={cid}"));
                    io.reply(r.reply(false, 0)).await?;
                }
            }
            Op::Ru | Op::Wu => {
                let m = mons.entry(r.key).or_default();
                let (mon, cid) = (r.key, r.cid);
                if r.op == Op::Ru {
                    if m.readers == 0 {
                        return Err(SimError::Protocol { core: io.me(), msg: format!("read unlock of free monitor {mon}") });
                    }
                    m.readers -= 1;
                    io.ctx.note("rw", || format!("release kind=read mon={mon} cid={cid}"));
                } else {
                    if m.writer != Some(cid) {
                        return Err(SimError::Protocol { core: io.me(), msg: format!("write unlock of monitor {mon} by non-owner {cid}") });
                    }
                    m.writer = None;
                    io.ctx.note("rw", || format!("release kind=write mon={mon} cid={cid}"));
                }
                io.reply(r.reply(true, 0)).await?;
                admit_next(&mut io, m, fairness).await?;
            }
            other => return Err(SimError::Protocol { core: io.me(), msg: format!("manager got op {other:?}") }),
        }
    }
}
