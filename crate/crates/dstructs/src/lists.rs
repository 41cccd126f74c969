//! Distributed lists: the unsorted list (token for inserts, broadcast search and delete),
//! its two-phase insert variant, and the sorted list with chunk moves between neighbours.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use simcore::{CoreId, Ctx, Loc, Sim, SimError, SimResult};

use crate::msg::{Msg, Op, Reply, Req, Tk};
use crate::net::Client;
use crate::token::TokenPayload;

/// `Reply::aux` on a NACKed insert: the key is already present.
pub const NACK_DUP: i64 = 1;
/// `Reply::aux` on a NACKed insert: no space left.
pub const NACK_FULL: i64 = 2;
/// `Reply::aux` on a two-phase insert: the key may have been added since the probe; probe again.
pub const RETRY: i64 = 3;

/// Per-server contents: key -> (data, round of the chunk holding it).
pub type UListProbe = Rc<RefCell<Vec<BTreeMap<i64, (i64, i64)>>>>;
/// Per-server contents of the sorted list: key -> data.
pub type SListProbe = Rc<RefCell<Vec<BTreeMap<i64, i64>>>>;

async fn send_reply(ctx: &Ctx<Msg>, r: &Req, ok: bool, aux: i64, sid: usize) -> SimResult<()> {
    let rep = r.reply(ok, 0).aux(aux).from_sid(sid);
    ctx.send(r.cid, Msg::Reply(rep)).await
}

/// Sends one request per server and collects every reply.
async fn broadcast(cl: &Client, servers: &[CoreId], op: Op, key: i64, tk: Tk) -> SimResult<Vec<Reply>> {
    let mut seqs = Vec::with_capacity(servers.len());
    for &s in servers {
        let r = cl.req(op).key(key).tk(tk);
        seqs.push(r.seq);
        cl.send(s, r).await?;
    }
    let mut out = Vec::with_capacity(seqs.len());
    for q in seqs {
        out.push(cl.wait(q).await);
    }
    Ok(out)
}

fn protocol(ctx: &Ctx<Msg>, what: String) -> SimError {
    SimError::Protocol { core: ctx.me(), msg: what }
}

/// Unsorted list over a ring of servers.
#[derive(Clone, Debug)]
pub struct UList {
    pub servers: Vec<CoreId>,
    /// Elements per chunk.
    pub capacity: usize,
    /// Static lists never wrap the token past the last server.
    pub dynamic: bool,
    /// Two-phase inserts (probe, then targeted insert at the token holder).
    pub alt: bool,
}

impl UList {
    pub fn new(servers: Vec<CoreId>, capacity: usize) -> Self {
        UList { servers, capacity, dynamic: true, alt: false }
    }

    pub fn two_phase(mut self) -> Self {
        self.alt = true;
        self
    }

    pub fn fixed(mut self) -> Self {
        self.dynamic = false;
        self
    }

    pub fn spawn(&self, sim: &mut Sim<Msg>) -> SimResult<UListProbe> {
        let probe: UListProbe = Rc::new(RefCell::new(vec![BTreeMap::new(); self.servers.len()]));
        for (i, &core) in self.servers.iter().enumerate() {
            let (ul, p) = (self.clone(), probe.clone());
            sim.spawn(core, "ulist-server", true, move |ctx| async move {
                let mut s = UServer::new(ul, i, ctx, p);
                s.run().await
            })?;
        }
        Ok(probe)
    }

    pub async fn insert(&self, cl: &Client, key: i64, data: i64) -> SimResult<bool> {
        Ok(self.insert_reply(cl, key, data).await?.ok)
    }

    /// Insert returning the deciding reply; `aux` tells a duplicate from a full list.
    pub async fn insert_reply(&self, cl: &Client, key: i64, data: i64) -> SimResult<Reply> {
        if !self.alt {
            return cl.call(self.servers[0], cl.req(Op::Insert).key(key).data(data)).await;
        }
        loop {
            let since = cl.ctx.now();
            let probes = broadcast(cl, &self.servers, Op::Insert, key, Tk::Probe).await?;
            if let Some(hit) = probes.iter().find(|r| r.ok) {
                return Ok(Reply { ok: false, aux: NACK_DUP, ..hit.clone() });
            }
            let tid = probes.iter().find(|r| r.aux == 1).map_or(0, |r| r.sid as usize);
            let req = cl.req(Op::Insert).key(key).data(data).aux(since as i64).tk(Tk::Target);
            let r = cl.call(self.servers[tid], req).await?;
            if r.ok || r.aux != RETRY {
                return Ok(r);
            }
        }
    }

    pub async fn search(&self, cl: &Client, key: i64) -> SimResult<bool> {
        Ok(broadcast(cl, &self.servers, Op::Search, key, Tk::None).await?.iter().any(|r| r.ok))
    }

    pub async fn delete(&self, cl: &Client, key: i64) -> SimResult<bool> {
        Ok(broadcast(cl, &self.servers, Op::Delete, key, Tk::None).await?.iter().any(|r| r.ok))
    }
}

struct UServer {
    ul: UList,
    me: usize,
    ctx: Ctx<Msg>,
    /// round -> chunk contents
    chunks: BTreeMap<i64, BTreeMap<i64, i64>>,
    round: i64,
    token: Option<TokenPayload>,
    probe: UListProbe,
}

impl UServer {
    fn new(ul: UList, me: usize, ctx: Ctx<Msg>, probe: UListProbe) -> Self {
        let mut s = UServer { ul, me, ctx, chunks: BTreeMap::new(), round: 0, token: None, probe };
        if me == 0 {
            s.chunks.insert(0, BTreeMap::new());
            s.token = Some(TokenPayload::default());
            s.ctx.note("token", || "acquire kind=list round=0".into());
        }
        s
    }

    fn next(&self) -> CoreId {
        self.ul.servers[(self.me + 1) % self.ul.servers.len()]
    }

    fn is_last(&self) -> bool {
        self.me + 1 == self.ul.servers.len()
    }

    fn contains(&self, key: i64) -> bool {
        self.chunks.values().any(|c| c.contains_key(&key))
    }

    fn acquire(&mut self, r: &mut Req) -> SimResult<()> {
        let payload = r.token.take().ok_or_else(|| protocol(&self.ctx, "list token without payload".into()))?;
        self.token = Some(*payload);
        r.tk = Tk::None;
        self.chunks.entry(self.round).or_default();
        let round = self.round;
        self.ctx.note("token", || format!("acquire kind=list round={round}"));
        Ok(())
    }

    /// Inserts into the chunk of the current round if it has room.
    fn try_insert(&mut self, key: i64, data: i64) -> bool {
        let cap = self.ul.capacity;
        let chunk = self.chunks.entry(self.round).or_default();
        if chunk.len() >= cap {
            return false;
        }
        chunk.insert(key, data);
        let now = self.ctx.now();
        self.token.as_mut().expect("holder").log.push((key, now));
        let round = self.round;
        self.ctx.note("store", || format!("key={key} round={round}"));
        true
    }

    /// Full chunk: bump the round and hand the token with the request to the next server.
    async fn pass(&mut self, mut r: Req, tk: Tk) -> SimResult<()> {
        let payload = self.token.take().expect("holder");
        self.round += 1;
        self.ctx.note("token", || "release kind=list".into());
        r.tk = tk;
        r.token = Some(Box::new(payload));
        self.ctx.send(self.next(), Msg::Req(r)).await
    }

    async fn run(&mut self) -> SimResult<()> {
        loop {
            let env = self.ctx.recv().await;
            let Msg::Req(r) = env.msg else {
                return Err(protocol(&self.ctx, format!("list server got {:?}", env.msg)));
            };
            match r.op {
                Op::Insert if self.ul.alt => self.insert_two_phase(r).await?,
                Op::Insert => self.insert(r).await?,
                Op::Search => {
                    let hit = self.contains(r.key);
                    send_reply(&self.ctx, &r, hit, 0, self.me).await?;
                }
                Op::Delete => {
                    let hit = self.chunks.values_mut().any(|c| c.remove(&r.key).is_some());
                    send_reply(&self.ctx, &r, hit, 0, self.me).await?;
                }
                other => return Err(protocol(&self.ctx, format!("list server got {other:?}"))),
            }
            let snapshot = self.chunks.iter().flat_map(|(round, c)| c.iter().map(|(k, d)| (*k, (*d, *round)))).collect();
            self.probe.borrow_mut()[self.me] = snapshot;
        }
    }

    async fn insert(&mut self, mut r: Req) -> SimResult<()> {
        if r.tk == Tk::Token {
            self.acquire(&mut r)?;
        }
        if self.contains(r.key) {
            return send_reply(&self.ctx, &r, false, NACK_DUP, self.me).await;
        }
        if self.token.is_none() {
            if self.is_last() {
                r.mloop = true;
            }
            return self.ctx.send(self.next(), Msg::Req(r)).await;
        }
        // a new round starts at server 0's chunk only after the request has seen every server
        if !self.is_last() && self.round > 0 && !r.mloop {
            return self.ctx.send(self.next(), Msg::Req(r)).await;
        }
        if self.try_insert(r.key, r.data) {
            return send_reply(&self.ctx, &r, true, 0, self.me).await;
        }
        if !self.ul.dynamic && self.is_last() {
            return send_reply(&self.ctx, &r, false, NACK_FULL, self.me).await;
        }
        self.pass(r, Tk::Token).await
    }

    async fn insert_two_phase(&mut self, mut r: Req) -> SimResult<()> {
        if r.tk == Tk::Probe {
            let hit = self.contains(r.key);
            return send_reply(&self.ctx, &r, hit, self.token.is_some() as i64, self.me).await;
        }
        if r.tk == Tk::Token {
            self.acquire(&mut r)?;
        }
        if self.contains(r.key) {
            return send_reply(&self.ctx, &r, false, NACK_DUP, self.me).await;
        }
        let Some(tok) = self.token.as_ref() else {
            r.tk = Tk::Target;
            return self.ctx.send(self.next(), Msg::Req(r)).await;
        };
        // the probe may have missed an insert of this key on a server it had already asked
        let since = r.aux.max(0) as u64;
        if tok.log.iter().rev().take_while(|(_, t)| *t >= since).any(|(k, _)| *k == r.key) {
            return send_reply(&self.ctx, &r, false, RETRY, self.me).await;
        }
        if self.try_insert(r.key, r.data) {
            return send_reply(&self.ctx, &r, true, 0, self.me).await;
        }
        if !self.ul.dynamic && self.is_last() {
            return send_reply(&self.ctx, &r, false, NACK_FULL, self.me).await;
        }
        self.pass(r, Tk::Token).await
    }
}

/// Sorted list: server `i` holds keys below every key on server `i+1`.
#[derive(Clone, Debug)]
pub struct SList {
    pub servers: Vec<CoreId>,
    pub capacity: usize,
}

/// Chunk staging area in the sender's memory and inbox in the receiver's.
const CHUNK_STAGE: usize = 56 * 1024;
const CHUNK_INBOX: usize = 60 * 1024;
const ITEM_BYTES: usize = 16;
/// Items per DMA piece.
const PIECE: usize = 4096 / ITEM_BYTES;

impl SList {
    pub fn new(servers: Vec<CoreId>, capacity: usize) -> Self {
        SList { servers, capacity: capacity.max(1) }
    }

    /// Elements shipped by one chunk move.
    pub fn chunk_size(&self) -> usize {
        self.capacity.div_ceil(2)
    }

    pub fn spawn(&self, sim: &mut Sim<Msg>) -> SimResult<SListProbe> {
        let probe: SListProbe = Rc::new(RefCell::new(vec![BTreeMap::new(); self.servers.len()]));
        let clients = sim.topology().total();
        for (i, &core) in self.servers.iter().enumerate() {
            let (sl, p) = (self.clone(), probe.clone());
            sim.spawn(core, "slist-server", true, move |ctx| async move {
                let mut s = SServer { sl, me: i, ctx, llist: BTreeMap::new(), cv: vec![0; clients], next_used: false, probe: p };
                s.run().await
            })?;
        }
        Ok(probe)
    }

    pub async fn insert(&self, cl: &Client, key: i64, data: i64) -> SimResult<bool> {
        Ok(self.insert_reply(cl, key, data).await?.ok)
    }

    pub async fn insert_reply(&self, cl: &Client, key: i64, data: i64) -> SimResult<Reply> {
        cl.call(self.servers[0], cl.req(Op::Insert).key(key).data(data)).await
    }

    pub async fn search(&self, cl: &Client, key: i64) -> SimResult<bool> {
        Ok(broadcast(cl, &self.servers, Op::Search, key, Tk::None).await?.iter().any(|r| r.ok))
    }

    pub async fn delete(&self, cl: &Client, key: i64) -> SimResult<bool> {
        Ok(broadcast(cl, &self.servers, Op::Delete, key, Tk::None).await?.iter().any(|r| r.ok))
    }
}

struct SServer {
    sl: SList,
    me: usize,
    ctx: Ctx<Msg>,
    llist: BTreeMap<i64, i64>,
    /// Search and delete requests served, per client core.
    cv: Vec<u64>,
    /// Set once anything has been forwarded or moved to the next server.
    next_used: bool,
    probe: SListProbe,
}

fn is_query(m: &Msg) -> Option<&Req> {
    match m {
        Msg::Req(r) if matches!(r.op, Op::Search | Op::Delete) => Some(r),
        _ => None,
    }
}

impl SServer {
    fn is_last(&self) -> bool {
        self.me + 1 == self.sl.servers.len()
    }

    fn next(&self) -> CoreId {
        self.sl.servers[self.me + 1]
    }

    fn prev(&self) -> CoreId {
        self.sl.servers[self.me - 1]
    }

    fn refresh(&self) {
        self.probe.borrow_mut()[self.me].clone_from(&self.llist);
    }

    async fn run(&mut self) -> SimResult<()> {
        loop {
            let env = self.ctx.recv().await;
            match env.msg {
                Msg::Req(r) if r.op == Op::Insert => self.insert(r).await?,
                Msg::Req(r) if matches!(r.op, Op::Search | Op::Delete) => self.serve(r).await?,
                Msg::ReqCv { from, cv } if from + 1 == self.me => self.receive_move(cv).await?,
                other => return Err(protocol(&self.ctx, format!("sorted list server got {other:?}"))),
            }
            self.refresh();
        }
    }

    async fn serve(&mut self, r: Req) -> SimResult<()> {
        self.cv[r.cid] += 1;
        let v = self.cv[r.cid];
        let cid = r.cid;
        self.ctx.note("cv", || format!("cid={cid} v={v}"));
        let hit = match r.op {
            Op::Search => self.llist.contains_key(&r.key),
            _ => self.llist.remove(&r.key).is_some(),
        };
        send_reply(&self.ctx, &r, hit, 0, self.me).await
    }

    async fn insert(&mut self, r: Req) -> SimResult<()> {
        loop {
            if self.llist.contains_key(&r.key) {
                return send_reply(&self.ctx, &r, false, NACK_DUP, self.me).await;
            }
            let kmax = self.llist.last_key_value().map(|(k, _)| *k);
            let belongs = kmax.is_some_and(|m| r.key <= m) || self.is_last() || !self.next_used;
            if !belongs {
                self.next_used = true;
                return self.ctx.send(self.next(), Msg::Req(r)).await;
            }
            if self.llist.len() < self.sl.capacity {
                self.llist.insert(r.key, r.data);
                return send_reply(&self.ctx, &r, true, 0, self.me).await;
            }
            if self.is_last() || !self.server_move().await? {
                return send_reply(&self.ctx, &r, false, NACK_FULL, self.me).await;
            }
            self.refresh();
        }
    }

    /// Serves queued searches and deletes of the clients this server is behind on.
    async fn catch_up(&mut self, target: &[u64]) -> SimResult<()> {
        loop {
            let behind: Vec<CoreId> = (0..self.cv.len()).filter(|c| self.cv[*c] < target[*c]).collect();
            if behind.is_empty() {
                return Ok(());
            }
            let env = self.ctx.recv_where(|e| is_query(&e.msg).is_some_and(|r| behind.contains(&r.cid))).await;
            let Msg::Req(r) = env.msg else { unreachable!("filtered on queries") };
            self.serve(r).await?;
        }
    }

    /// Ships the largest keys to the next server. The two servers first agree on which
    /// searches and deletes have been served, so none of them sees the chunk twice or never.
    async fn server_move(&mut self) -> SimResult<bool> {
        let next = self.next();
        self.next_used = true;
        self.ctx.send(next, Msg::ReqCv { from: self.me, cv: self.cv.clone() }).await?;
        let env = self.ctx.recv_where(|e| e.src == next && matches!(e.msg, Msg::Cv(_) | Msg::ChunkAck(_))).await;
        let nbr_cv = match env.msg {
            Msg::Cv(v) => v,
            _ => return Ok(false),
        };
        self.catch_up(&nbr_cv).await?;
        let n = self.sl.chunk_size().min(self.llist.len());
        let chunk: Vec<(i64, i64)> = self.llist.iter().rev().take(n).rev().map(|(k, d)| (*k, *d)).collect();
        let (lo, hi) = (chunk.first().map_or(0, |c| c.0), chunk.last().map_or(0, |c| c.0));
        let me = self.me;
        self.ctx.note("move", || format!("from={me} to={} n={n} lo={lo} hi={hi}", me + 1));
        let mut pieces = chunk.chunks(PIECE).collect::<Vec<_>>();
        if chunk.len().is_multiple_of(PIECE) {
            pieces.push(&[]);
        }
        for piece in pieces {
            let bytes: Vec<u8> = piece.iter().flat_map(|(k, d)| k.to_le_bytes().into_iter().chain(d.to_le_bytes())).collect();
            let src = Loc { core: self.ctx.me(), addr: CHUNK_STAGE };
            self.ctx.mem_write(src, &bytes).await?;
            self.ctx.dma_copy(src, Loc { core: next, addr: CHUNK_INBOX }, bytes.len()).await?;
            self.ctx.send(next, Msg::Chunk { from: self.me, count: piece.len() }).await?;
            let env = self.ctx.recv_where(|e| e.src == next && matches!(e.msg, Msg::ChunkAck(_))).await;
            if !matches!(env.msg, Msg::ChunkAck(true)) {
                return Err(protocol(&self.ctx, "chunk piece rejected after the move was accepted".into()));
            }
        }
        for (k, _) in &chunk {
            self.llist.remove(k);
        }
        Ok(true)
    }

    /// Receiving side of a move from the previous server.
    async fn receive_move(&mut self, from_cv: Vec<u64>) -> SimResult<()> {
        let prev = self.prev();
        let need = self.sl.chunk_size();
        if self.llist.len() + need > self.sl.capacity && (self.is_last() || !self.server_move().await?) {
            return self.ctx.send(prev, Msg::ChunkAck(false)).await;
        }
        self.refresh();
        self.catch_up(&from_cv).await?;
        self.ctx.send(prev, Msg::Cv(self.cv.clone())).await?;
        loop {
            let env = self.ctx.recv_where(|e| e.src == prev && matches!(e.msg, Msg::Chunk { .. })).await;
            let Msg::Chunk { count, .. } = env.msg else { unreachable!("filtered on chunks") };
            let bytes = self.ctx.mem_read(Loc { core: self.ctx.me(), addr: CHUNK_INBOX }, count * ITEM_BYTES).await?;
            for item in bytes.chunks_exact(ITEM_BYTES) {
                let k = i64::from_le_bytes(item[..8].try_into().expect("8 bytes"));
                let d = i64::from_le_bytes(item[8..].try_into().expect("8 bytes"));
                self.llist.insert(k, d);
            }
            self.ctx.send(prev, Msg::ChunkAck(true)).await?;
            if count < PIECE {
                return Ok(());
            }
        }
    }
}
