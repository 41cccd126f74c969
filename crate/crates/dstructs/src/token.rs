//! Token-based stack, queue and deque over a logical ring of servers.
//!
//! Queue and deque share one engine. Element positions are absolute integers; position
//! `p` lives in chunk `p div capacity`, on server `chunk mod NS`, in round `chunk div NS`.
//! The tail token carries the next tail position, the head token the first occupied one,
//! so every local container is the set of positions it owns. Tokens also carry a per-client
//! watermark of the last request served under them, which keeps a request parked in one
//! server's client table from being served a second time elsewhere.

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;

use simcore::{CoreId, Ctx, Sim, SimError, SimResult};

use crate::msg::{Msg, Op, Reply, Req, Tk};
use crate::net::Client;

pub const DEFAULT_CAPACITY: usize = 64;

/// State travelling with a head or tail token.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenPayload {
    pub pos: i64,
    /// Client id -> sequence number of its last request served under this token.
    pub served: BTreeMap<CoreId, u64>,
    /// Unsorted list: (key, step) of every insert so far, in insertion order.
    pub log: Vec<(i64, u64)>,
}

impl TokenPayload {
    fn has_served(&self, cid: CoreId, seq: u64) -> bool {
        self.served.get(&cid).is_some_and(|s| *s >= seq)
    }

    fn mark(&mut self, cid: CoreId, seq: u64) {
        let s = self.served.entry(cid).or_default();
        *s = (*s).max(seq);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RingKind {
    Queue,
    Deque,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum End {
    Head,
    Tail,
}

fn end_of(op: Op) -> End {
    match op {
        Op::Enq | Op::EnqT | Op::DeqT => End::Tail,
        _ => End::Head,
    }
}

/// Ring direction a request travels in while looking for its token.
fn forward_next(op: Op) -> bool {
    matches!(op, Op::Enq | Op::EnqT | Op::Deq | Op::DeqH)
}

/// Local contents of every server, indexed by server, keyed by position.
pub type TokenProbe = Rc<RefCell<Vec<BTreeMap<i64, i64>>>>;

#[derive(Clone, Debug)]
pub struct TokenRing {
    pub servers: Vec<CoreId>,
    /// Elements per chunk.
    pub capacity: usize,
    /// Dynamic rings allocate a new chunk on every tail visit and never report full.
    pub dynamic: bool,
    pub kind: RingKind,
}

impl TokenRing {
    pub fn new(kind: RingKind, servers: Vec<CoreId>, capacity: usize, dynamic: bool) -> Self {
        TokenRing { servers, capacity, dynamic, kind }
    }

    pub fn ns(&self) -> usize {
        self.servers.len()
    }

    /// Server index owning position `p`.
    pub fn owner(&self, p: i64) -> usize {
        p.div_euclid(self.capacity as i64).rem_euclid(self.ns() as i64) as usize
    }

    /// Spiral round (chunk tag) of position `p`.
    pub fn round(&self, p: i64) -> i64 {
        p.div_euclid(self.capacity as i64).div_euclid(self.ns() as i64)
    }

    fn span(&self) -> i64 {
        (self.ns() * self.capacity) as i64
    }

    pub fn spawn(&self, sim: &mut Sim<Msg>) -> SimResult<TokenProbe> {
        let probe: TokenProbe = Rc::new(RefCell::new(vec![BTreeMap::new(); self.ns()]));
        for (i, &core) in self.servers.iter().enumerate() {
            let (ring, p) = (self.clone(), probe.clone());
            sim.spawn(core, "token-server", true, move |ctx| async move {
                let first = i == 0;
                let mut s = RingServer {
                    ring,
                    idx: i,
                    ctx,
                    store: BTreeMap::new(),
                    head: first.then(TokenPayload::default),
                    tail: first.then(TokenPayload::default),
                    clients: BTreeMap::new(),
                    probe: p,
                };
                if first {
                    s.ctx.note("token", || "acquire kind=head".into());
                    s.ctx.note("token", || "acquire kind=tail".into());
                }
                s.run().await
            })?;
        }
        Ok(probe)
    }
}

#[derive(Clone, Debug)]
struct Entry {
    op: Op,
    seq: u64,
    data: i64,
    served: bool,
}

enum Outcome {
    Done(bool, i64),
    Pass,
}

struct RingServer {
    ring: TokenRing,
    idx: usize,
    ctx: Ctx<Msg>,
    store: BTreeMap<i64, i64>,
    head: Option<TokenPayload>,
    tail: Option<TokenPayload>,
    clients: BTreeMap<CoreId, Entry>,
    probe: TokenProbe,
}

impl RingServer {
    fn token(&mut self, end: End) -> &mut Option<TokenPayload> {
        match end {
            End::Head => &mut self.head,
            End::Tail => &mut self.tail,
        }
    }

    fn neighbour(&self, next: bool) -> CoreId {
        let ns = self.ring.ns();
        let i = if next { (self.idx + 1) % ns } else { (self.idx + ns - 1) % ns };
        self.ring.servers[i]
    }

    async fn run(&mut self) -> SimResult<()> {
        loop {
            let env = self.ctx.recv().await;
            match env.msg {
                Msg::Req(r) => self.on_request(r).await?,
                Msg::Reply(rep) => {
                    // result of a request this server forwarded
                    if self.clients.get(&rep.cid).is_some_and(|e| e.seq == rep.seq) {
                        self.clients.remove(&rep.cid);
                    }
                    self.ctx.send(rep.cid, Msg::Reply(rep)).await?;
                }
                other => {
                    return Err(SimError::Protocol { core: self.ctx.me(), msg: format!("token server got {other:?}") });
                }
            }
            self.probe.borrow_mut()[self.idx].clone_from(&self.store);
        }
    }

    async fn on_request(&mut self, mut r: Req) -> SimResult<()> {
        let end = end_of(r.op);
        if matches!(r.tk, Tk::Head | Tk::Tail) {
            let payload = r.token.take().map(|b| *b).ok_or_else(|| SimError::Protocol {
                core: self.ctx.me(),
                msg: "token transition without payload".into(),
            })?;
            *self.token(end) = Some(payload);
            r.tk = Tk::None;
            self.ctx.note("token", || format!("acquire kind={}", end_name(end)));
            self.reset_if_empty();
            self.serve_old(end);
        }
        // a request that was served from the client table returns after its round trip
        if let Some(e) = self.clients.get(&r.cid).filter(|e| e.seq == r.seq && e.served).cloned() {
            self.clients.remove(&r.cid);
            let rep = Reply { op: r.op, cid: r.cid, seq: r.seq, ok: true, data: e.data, aux: 0, sid: self.idx as i64 };
            return self.ctx.send(r.cid, Msg::Reply(rep)).await;
        }
        let held = self.token(end).as_ref().map(|t| t.has_served(r.cid, r.seq));
        match held {
            None | Some(true) => {
                // no token here, or already served through its origin's table: keep travelling
                if r.sid == -1 {
                    self.clients.insert(r.cid, Entry { op: r.op, seq: r.seq, data: r.data, served: false });
                    r.sid = self.idx as i64;
                }
                let to = self.neighbour(forward_next(r.op));
                self.ctx.send(to, Msg::Req(r)).await
            }
            Some(false) => match self.attempt(r.op, r.data) {
                Outcome::Done(ok, data) => {
                    self.reset_if_empty();
                    self.token(end).as_mut().expect("held").mark(r.cid, r.seq);
                    let rep = Reply { op: r.op, cid: r.cid, seq: r.seq, ok, data, aux: 0, sid: self.idx as i64 };
                    if r.sid == -1 || r.sid == self.idx as i64 {
                        if r.sid != -1 {
                            self.clients.remove(&r.cid);
                        }
                        self.ctx.send(r.cid, Msg::Reply(rep)).await
                    } else {
                        self.ctx.send(self.ring.servers[r.sid as usize], Msg::Reply(rep)).await
                    }
                }
                Outcome::Pass => {
                    let next = forward_next(r.op);
                    let payload = self.token(end).take().expect("held");
                    let ok = self.forward_precondition(end, next, payload.pos);
                    self.ctx.note("fwd", || format!("kind={} dir={} ok={ok}", end_name(end), if next { "next" } else { "prev" }));
                    self.ctx.note("token", || format!("release kind={}", end_name(end)));
                    r.tk = if end == End::Head { Tk::Head } else { Tk::Tail };
                    r.token = Some(Box::new(payload));
                    if r.sid == -1 {
                        self.clients.insert(r.cid, Entry { op: r.op, seq: r.seq, data: r.data, served: false });
                        r.sid = self.idx as i64;
                    }
                    let to = self.neighbour(next);
                    self.ctx.send(to, Msg::Req(r)).await
                }
            },
        }
    }

    /// Tail moves forward only past a completely allocated chunk; head moves forward only
    /// once the chunk it leaves holds nothing.
    fn forward_precondition(&self, end: End, next: bool, pos: i64) -> bool {
        let c = self.ring.capacity as i64;
        let boundary = pos.rem_euclid(c) == 0;
        match (end, next) {
            (End::Tail, true) => boundary && self.ring.owner(pos - 1) == self.idx,
            (End::Head, true) => boundary && self.store.range(pos - c..pos).next().is_none(),
            _ => boundary,
        }
    }

    /// Tries `op` on the local container under a held token. Mutates only on success.
    fn attempt(&mut self, op: Op, data: i64) -> Outcome {
        let me = self.idx;
        let span = self.ring.span();
        let dynamic = self.ring.dynamic;
        match op {
            Op::Enq | Op::EnqT => {
                let t = self.tail.as_ref().expect("tail held").pos;
                if self.ring.owner(t) != me {
                    return Outcome::Pass;
                }
                if !dynamic && self.store.contains_key(&(t - span)) {
                    return Outcome::Done(false, 0);
                }
                self.put(t, data);
                self.tail.as_mut().expect("tail held").pos += 1;
                Outcome::Done(true, 0)
            }
            Op::EnqH => {
                let h = self.head.as_ref().expect("head held").pos;
                if self.ring.owner(h - 1) != me {
                    return Outcome::Pass;
                }
                if !dynamic && self.store.contains_key(&(h - 1 + span)) {
                    return Outcome::Done(false, 0);
                }
                self.put(h - 1, data);
                self.head.as_mut().expect("head held").pos -= 1;
                Outcome::Done(true, 0)
            }
            Op::DeqT => {
                let t = self.tail.as_ref().expect("tail held").pos;
                if self.ring.owner(t - 1) != me {
                    return Outcome::Pass;
                }
                match self.store.remove(&(t - 1)) {
                    Some(d) => {
                        self.tail.as_mut().expect("tail held").pos -= 1;
                        Outcome::Done(true, d)
                    }
                    None => Outcome::Done(false, 0),
                }
            }
            _ => {
                let h = self.head.as_ref().expect("head held").pos;
                if self.ring.owner(h) != me {
                    return Outcome::Pass;
                }
                match self.store.remove(&h) {
                    Some(d) => {
                        self.head.as_mut().expect("head held").pos += 1;
                        Outcome::Done(true, d)
                    }
                    None => Outcome::Done(false, 0),
                }
            }
        }
    }

    fn put(&mut self, p: i64, data: i64) {
        self.store.insert(p, data);
        let round = self.ring.round(p);
        self.ctx.note("store", || format!("pos={p} round={round}"));
    }

    /// With both tokens here and nothing stored, restart the spiral at this server's round-0 chunk.
    fn reset_if_empty(&mut self) {
        let (Some(h), Some(t)) = (self.head.as_mut(), self.tail.as_mut()) else { return };
        if h.pos == t.pos {
            let p = (self.idx * self.ring.capacity) as i64;
            h.pos = p;
            t.pos = p;
        }
    }

    /// Serves parked client-table requests for `end` after its token arrives: opposite
    /// pairs eliminate first (dynamic deque only; a full static deque must refuse the insert),
    /// then survivors are applied in ascending client order.
    fn serve_old(&mut self, end: End) {
        let tok = self.token(end).as_ref().expect("just acquired").clone();
        let live: Vec<(CoreId, Entry)> = self
            .clients
            .iter()
            .filter(|(cid, e)| !e.served && end_of(e.op) == end && !tok.has_served(**cid, e.seq))
            .map(|(c, e)| (*c, e.clone()))
            .collect();
        let mut done: Vec<(CoreId, u64, i64)> = Vec::new();
        let mut rest = live.clone();
        if self.ring.kind == RingKind::Deque && self.ring.dynamic {
            let (ins, rem): (Vec<_>, Vec<_>) = live.into_iter().partition(|(_, e)| e.op.is_insert());
            let pairs = ins.len().min(rem.len());
            for ((c1, e1), (c2, e2)) in ins.iter().zip(rem.iter()).take(pairs) {
                done.push((*c1, e1.seq, 0));
                done.push((*c2, e2.seq, e1.data));
                self.ctx.note("eliminate", || format!("ins={c1} rem={c2}"));
            }
            rest = ins.into_iter().skip(pairs).chain(rem.into_iter().skip(pairs)).collect();
            rest.sort_by_key(|(_, e)| e.op.is_remove());
        }
        for (cid, e) in rest {
            if let Outcome::Done(true, d) = self.attempt(e.op, e.data) {
                done.push((cid, e.seq, d));
            }
        }
        for (cid, seq, d) in done {
            let e = self.clients.get_mut(&cid).expect("table entry");
            e.served = true;
            e.data = d;
            self.token(end).as_mut().expect("held").mark(cid, seq);
        }
    }
}

fn end_name(e: End) -> &'static str {
    match e {
        End::Head => "head",
        End::Tail => "tail",
    }
}

/// Client endpoint for rings and the token stack. Remembers the last responding server per end;
/// a non-empty `script` overrides that choice, one entry per request.
pub struct TokenClient {
    pub cl: Client,
    servers: Vec<CoreId>,
    head_sid: Cell<usize>,
    tail_sid: Cell<usize>,
    script: RefCell<VecDeque<usize>>,
}

impl TokenClient {
    pub fn new(ctx: Ctx<Msg>, servers: Vec<CoreId>) -> Self {
        TokenClient {
            cl: Client::new(ctx, None),
            servers,
            head_sid: Cell::new(0),
            tail_sid: Cell::new(0),
            script: RefCell::new(VecDeque::new()),
        }
    }

    /// Sends the next requests to these server indices instead of the cached ones.
    pub fn with_script(self, targets: impl IntoIterator<Item = usize>) -> Self {
        self.script.borrow_mut().extend(targets);
        self
    }

    fn cache(&self, op: Op) -> &Cell<usize> {
        match op {
            Op::Deq | Op::EnqH | Op::DeqH | Op::Pop => &self.head_sid,
            _ => &self.tail_sid,
        }
    }

    pub async fn call(&self, op: Op, data: i64) -> SimResult<Reply> {
        let scripted = self.script.borrow_mut().pop_front();
        let sid = scripted.unwrap_or(self.cache(op).get()) % self.servers.len();
        let r = self.cl.call(self.servers[sid], self.cl.req(op).data(data)).await?;
        if r.sid >= 0 {
            // the stack has a single token, so both caches follow it
            if matches!(op, Op::Push | Op::Pop) {
                self.head_sid.set(r.sid as usize);
                self.tail_sid.set(r.sid as usize);
            } else {
                self.cache(op).set(r.sid as usize);
            }
        }
        Ok(r)
    }
}

/// Token stack server ring: non-wrapping, one token, no client tables.
#[derive(Clone, Debug)]
pub struct TokenStack {
    pub servers: Vec<CoreId>,
    pub capacity: usize,
}

/// Per-server local stacks.
pub type StackProbe = Rc<RefCell<Vec<Vec<i64>>>>;

impl TokenStack {
    pub fn new(servers: Vec<CoreId>, capacity: usize) -> Self {
        TokenStack { servers, capacity }
    }

    pub fn spawn(&self, sim: &mut Sim<Msg>) -> SimResult<StackProbe> {
        let probe: StackProbe = Rc::new(RefCell::new(vec![Vec::new(); self.servers.len()]));
        for (i, &core) in self.servers.iter().enumerate() {
            let (st, p) = (self.clone(), probe.clone());
            sim.spawn(core, "tstack-server", true, move |ctx| tstack_server(ctx, st, i, p))?;
        }
        Ok(probe)
    }
}

async fn tstack_server(ctx: Ctx<Msg>, st: TokenStack, me: usize, probe: StackProbe) -> SimResult<()> {
    let ns = st.servers.len();
    let mut lstack: Vec<i64> = Vec::new();
    let mut token = 0usize;
    if me == 0 {
        ctx.note("token", || "acquire kind=stack".into());
    }
    loop {
        let env = ctx.recv().await;
        let Msg::Req(mut r) = env.msg else {
            return Err(SimError::Protocol { core: ctx.me(), msg: "token stack server got a non-request".into() });
        };
        if r.tk == Tk::Token {
            token = me;
            r.tk = Tk::None;
            ctx.note("token", || "acquire kind=stack".into());
        }
        if token != me {
            ctx.send(st.servers[token], Msg::Req(r)).await?;
            continue;
        }
        let reply = |ok: bool, data: i64| Msg::Reply(r.reply(ok, data).from_sid(me));
        match r.op {
            Op::Push if lstack.len() < st.capacity => {
                lstack.push(r.data);
                ctx.send(r.cid, reply(true, 0)).await?;
            }
            Op::Push if me + 1 < ns => {
                token = me + 1;
                let full = lstack.len() == st.capacity;
                ctx.note("fwd", || format!("kind=stack dir=next ok={full}"));
                ctx.note("token", || "release kind=stack".into());
                ctx.send(st.servers[token], Msg::Req(r.tk(Tk::Token))).await?;
            }
            Op::Push => ctx.send(r.cid, reply(false, 0)).await?,
            Op::Pop if !lstack.is_empty() => {
                let d = lstack.pop().expect("non-empty");
                ctx.send(r.cid, reply(true, d)).await?;
            }
            Op::Pop if me > 0 => {
                token = me - 1;
                let empty = lstack.is_empty();
                ctx.note("fwd", || format!("kind=stack dir=prev ok={empty}"));
                ctx.note("token", || "release kind=stack".into());
                ctx.send(st.servers[token], Msg::Req(r.tk(Tk::Token))).await?;
            }
            Op::Pop => ctx.send(r.cid, reply(false, 0)).await?,
            _ => return Err(SimError::Protocol { core: ctx.me(), msg: format!("token stack got {:?}", r.op) }),
        }
        probe.borrow_mut()[me].clone_from(&lstack);
    }
}
