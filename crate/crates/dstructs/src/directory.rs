//! Distributed hash table with chained buckets spread over `NS` server processes.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;

use simcore::{CoreId, Sim, SimResult};

use crate::msg::{Msg, Op, Req};
use crate::net::{Client, ServerIo};

pub const DEFAULT_BUCKETS: usize = 64;

/// Home of `key`: `idx = ((key mod NS*B) + NS*B) mod NS*B`, server `idx mod NS`, bucket `idx / NS`.
pub fn hash(key: i64, ns: usize, b: usize) -> (usize, usize) {
    let m = (ns * b) as i64;
    let idx = (key.rem_euclid(m)) as usize;
    (idx % ns, idx / ns)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirEntry {
    pub key: i64,
    pub data: i64,
    /// Removal by `BDELETE` is withheld until this step.
    pub not_before: u64,
}

/// Snapshot of every server's buckets, refreshed after each request.
pub type DirProbe = Rc<RefCell<Vec<Vec<Vec<DirEntry>>>>>;

/// Client-side handle: where the servers live.
#[derive(Clone, Debug)]
pub struct Directory {
    pub servers: Vec<CoreId>,
    pub buckets: usize,
}

impl Directory {
    pub fn new(servers: Vec<CoreId>) -> Self {
        Directory { servers, buckets: DEFAULT_BUCKETS }
    }

    pub fn home(&self, key: i64) -> CoreId {
        self.servers[hash(key, self.servers.len(), self.buckets).0]
    }

    /// Spawns one server per core and returns a probe of their tables.
    pub fn spawn(&self, sim: &mut Sim<Msg>) -> SimResult<DirProbe> {
        let probe: DirProbe = Rc::new(RefCell::new(vec![vec![Vec::new(); self.buckets]; self.servers.len()]));
        for (i, &core) in self.servers.iter().enumerate() {
            let (dir, p) = (self.clone(), probe.clone());
            sim.spawn(core, "dir-server", true, move |ctx| run_server(ServerIo::new(ctx), dir, i, p))?;
        }
        Ok(probe)
    }

    pub async fn insert(&self, cl: &Client, key: i64, data: i64) -> SimResult<bool> {
        self.insert_at(cl, key, data, 0).await
    }

    /// Insert whose removal by [`Directory::block_delete`] is held back until step `not_before`.
    pub async fn insert_at(&self, cl: &Client, key: i64, data: i64, not_before: u64) -> SimResult<bool> {
        let r = cl.call(self.home(key), cl.req(Op::DInsert).key(key).data(data).aux(not_before as i64)).await?;
        Ok(r.ok)
    }

    pub async fn search(&self, cl: &Client, key: i64) -> SimResult<Option<i64>> {
        let r = cl.call(self.home(key), cl.req(Op::DSearch).key(key)).await?;
        Ok(r.ok.then_some(r.data))
    }

    pub async fn delete(&self, cl: &Client, key: i64) -> SimResult<Option<i64>> {
        let r = cl.call(self.home(key), cl.req(Op::DDelete).key(key)).await?;
        Ok(r.ok.then_some(r.data))
    }

    /// Removes `key`, waiting at the home server until it is present.
    pub async fn block_delete(&self, cl: &Client, key: i64) -> SimResult<i64> {
        let r = cl.call(self.home(key), cl.req(Op::DBDelete).key(key)).await?;
        Ok(r.data)
    }
}

struct Table {
    buckets: Vec<Vec<DirEntry>>,
    ns: usize,
}

impl Table {
    fn bucket(&mut self, key: i64) -> &mut Vec<DirEntry> {
        let b = hash(key, self.ns, self.buckets.len()).1;
        &mut self.buckets[b]
    }

    fn find(&mut self, key: i64) -> Option<&DirEntry> {
        self.bucket(key).iter().find(|e| e.key == key)
    }

    fn take(&mut self, key: i64) -> Option<DirEntry> {
        let chain = self.bucket(key);
        let i = chain.iter().position(|e| e.key == key)?;
        Some(chain.swap_remove(i))
    }
}

async fn run_server(mut io: ServerIo, dir: Directory, idx: usize, probe: DirProbe) -> SimResult<()> {
    let ns = dir.servers.len();
    let mut t = Table { buckets: vec![Vec::new(); dir.buckets], ns };
    let mut waiters: BTreeMap<i64, VecDeque<Req>> = BTreeMap::new();
    loop {
        if release_waiters(&mut io, &mut t, &mut waiters).await? {
            probe.borrow_mut()[idx].clone_from(&t.buckets);
        }
        // wake up when a withheld entry some waiter wants becomes removable
        let now = io.ctx.now();
        let deadline = waiters
            .keys()
            .filter_map(|k| t.find(*k).map(|e| e.not_before))
            .filter(|nb| *nb > now)
            .min();
        let Some((_, msg)) = io.next_until(|_| true, deadline).await? else {
            release_waiters(&mut io, &mut t, &mut waiters).await?;
            probe.borrow_mut()[idx].clone_from(&t.buckets);
            continue;
        };
        let Msg::Req(r) = msg else { continue };
        debug_assert_eq!(hash(r.key, ns, dir.buckets).0, idx, "request routed to the wrong server");
        let b = hash(r.key, ns, dir.buckets).1;
        match r.op {
            Op::DInsert => {
                let ok = t.find(r.key).is_none();
                if ok {
                    let nb = r.aux.max(0) as u64;
                    t.bucket(r.key).push(DirEntry { key: r.key, data: r.data, not_before: nb });
                }
                io.reply(r.reply(ok, 0)).await?;
                if ok && waiters.contains_key(&r.key) {
                    release_waiters(&mut io, &mut t, &mut waiters).await?;
                }
            }
            Op::DSearch => {
                let hit = t.find(r.key).map(|e| e.data);
                io.reply(r.reply(hit.is_some(), hit.unwrap_or(0))).await?;
            }
            Op::DDelete => {
                let hit = t.take(r.key).map(|e| e.data);
                io.reply(r.reply(hit.is_some(), hit.unwrap_or(0))).await?;
            }
            Op::DBDelete => {
                waiters.entry(r.key).or_default().push_back(r);
                release_waiters(&mut io, &mut t, &mut waiters).await?;
            }
            _ => {}
        }
        probe.borrow_mut()[idx][b].clone_from(&t.buckets[b]);
    }
}

/// Answers every waiter whose key is present and removable; true if any was answered.
async fn release_waiters(io: &mut ServerIo, t: &mut Table, waiters: &mut BTreeMap<i64, VecDeque<Req>>) -> SimResult<bool> {
    let now = io.ctx.now();
    let ready: Vec<i64> = waiters.keys().copied().filter(|k| t.find(*k).is_some_and(|e| e.not_before <= now)).collect();
    let any = !ready.is_empty();
    for k in ready {
        let q = waiters.get_mut(&k).expect("listed");
        let r = q.pop_front().expect("non-empty wait list");
        if q.is_empty() {
            waiters.remove(&k);
        }
        let e = t.take(k).expect("present");
        io.reply(r.reply(true, e.data)).await?;
    }
    Ok(any)
}
