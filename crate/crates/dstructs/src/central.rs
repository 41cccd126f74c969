//! Centralized stack, queue and deque held by a single server, and CC-Synch combining
//! through island-local shared cells.

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;

use simcore::{CellValue, CoreId, Ctx, Sim, SimError, SimResult};

use crate::msg::{Msg, Op, Reply, Req};
use crate::net::{Client, ServerIo};

/// Contents of a central server, bottom or head first.
pub type CentralProbe = Rc<RefCell<VecDeque<i64>>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CentralKind {
    Stack,
    Queue,
    Deque,
}

#[derive(Clone, Debug)]
pub struct Central {
    pub server: CoreId,
    pub kind: CentralKind,
}

impl Central {
    pub fn new(server: CoreId, kind: CentralKind) -> Self {
        Central { server, kind }
    }

    pub fn spawn(&self, sim: &mut Sim<Msg>) -> SimResult<CentralProbe> {
        let probe: CentralProbe = Rc::default();
        let (p, kind) = (probe.clone(), self.kind);
        sim.spawn(self.server, "central-server", true, move |ctx| central_server(ServerIo::new(ctx), kind, p))?;
        Ok(probe)
    }

    /// Request for `op`; send it with [`Client::call`] or [`CcClient::call`].
    pub fn request(&self, cl: &Client, op: Op, data: i64) -> Req {
        cl.req(op).data(data)
    }
}

async fn central_server(mut io: ServerIo, kind: CentralKind, probe: CentralProbe) -> SimResult<()> {
    let mut items: VecDeque<i64> = VecDeque::new();
    loop {
        let (_, msg) = io.next().await?;
        let Msg::Req(r) = msg else {
            return Err(SimError::Protocol { core: io.me(), msg: format!("central server got {msg:?}") });
        };
        let taken = match (kind, r.op) {
            (CentralKind::Stack, Op::Push) | (CentralKind::Queue, Op::Enq) | (CentralKind::Deque, Op::EnqT) => {
                items.push_back(r.data);
                None
            }
            (CentralKind::Deque, Op::EnqH) => {
                items.push_front(r.data);
                None
            }
            (CentralKind::Stack, Op::Pop) | (CentralKind::Deque, Op::DeqT) => Some(items.pop_back()),
            (CentralKind::Queue, Op::Deq) | (CentralKind::Deque, Op::DeqH) => Some(items.pop_front()),
            _ => return Err(SimError::Protocol { core: io.me(), msg: format!("{kind:?} server got {:?}", r.op) }),
        };
        let rep = match taken {
            None => r.reply(true, 0),
            Some(v) => r.reply(v.is_some(), v.unwrap_or(0)),
        };
        io.reply(rep).await?;
        probe.borrow_mut().clone_from(&items);
    }
}

pub const DEFAULT_H: usize = 64;

const TAIL: u64 = 0;
const REQ: u64 = 0;
const RET: u64 = 1;
const WAIT: u64 = 2;
const COMPLETED: u64 = 3;
/// Next node id plus one; zero means none.
const NEXT: u64 = 4;

fn field(node: u64, f: u64) -> u64 {
    16 + node * 8 + f
}

/// CC-Synch client. All clients of an island share a request list in the island's cells;
/// whoever finds its node at the head combines up to `h` requests into one batch per
/// destination and hands the role on. Node 0 is the initial dummy, client `c` starts with node `c+1`.
pub struct CcClient {
    pub cl: Client,
    pub h: usize,
    spare: Cell<u64>,
}

impl CcClient {
    pub fn new(ctx: Ctx<Msg>, h: usize) -> Self {
        let spare = ctx.me() as u64 + 1;
        CcClient { cl: Client::new(ctx, None), h: h.max(1), spare: Cell::new(spare) }
    }

    pub async fn call(&self, dest: CoreId, req: Req) -> SimResult<Reply> {
        let ctx = &self.cl.ctx;
        let next = self.spare.get();
        ctx.cell_write(field(next, NEXT), CellValue::Int(0)).await;
        ctx.cell_write(field(next, WAIT), CellValue::Int(1)).await;
        ctx.cell_write(field(next, COMPLETED), CellValue::Int(0)).await;
        let cur = ctx.cell_swap(TAIL, CellValue::Int(next as i64)).await.int() as u64;
        ctx.cell_write(field(cur, REQ), CellValue::Msg(Msg::Up { dest, req })).await;
        ctx.cell_write(field(cur, NEXT), CellValue::Int(next as i64 + 1)).await;
        self.spare.set(cur);
        while ctx.cell_read(field(cur, WAIT)).await.int() == 1 {}
        if ctx.cell_read(field(cur, COMPLETED)).await.int() == 1 {
            return match ctx.cell_read(field(cur, RET)).await {
                CellValue::Msg(Msg::Reply(r)) => Ok(r),
                other => Err(SimError::Protocol { core: ctx.me(), msg: format!("completed node without reply: {other:?}") }),
            };
        }
        self.combine(cur).await
    }

    async fn combine(&self, first: u64) -> SimResult<Reply> {
        let ctx = &self.cl.ctx;
        let me = ctx.me();
        let mut nodes = Vec::new();
        let mut tmp = first;
        while nodes.len() < self.h {
            let n = ctx.cell_read(field(tmp, NEXT)).await.int();
            if n == 0 {
                break;
            }
            nodes.push(tmp);
            tmp = n as u64 - 1;
        }
        let count = nodes.len();
        ctx.note("ccsynch", || format!("begin n={count}"));
        let mut by_dest: BTreeMap<CoreId, Vec<Req>> = BTreeMap::new();
        let mut owner: BTreeMap<(CoreId, u64), u64> = BTreeMap::new();
        for &n in &nodes {
            match ctx.cell_read(field(n, REQ)).await {
                CellValue::Msg(Msg::Up { dest, req }) => {
                    owner.insert((req.cid, req.seq), n);
                    by_dest.entry(dest).or_default().push(req);
                }
                other => return Err(SimError::Protocol { core: me, msg: format!("announced node without request: {other:?}") }),
            }
        }
        for (&dest, reqs) in &by_dest {
            ctx.send(dest, Msg::Batch { master: me, reqs: reqs.clone() }).await?;
        }
        let mut mine = None;
        for &dest in by_dest.keys() {
            let env = ctx.recv_where(|e| e.src == dest && matches!(e.msg, Msg::BatchReply { .. })).await;
            let Msg::BatchReply { replies, .. } = env.msg else { unreachable!("filtered on batch replies") };
            for r in replies {
                let n = owner[&(r.cid, r.seq)];
                if n == first {
                    mine = Some(r);
                    continue;
                }
                ctx.cell_write(field(n, RET), CellValue::Msg(Msg::Reply(r))).await;
                ctx.cell_write(field(n, COMPLETED), CellValue::Int(1)).await;
                ctx.cell_write(field(n, WAIT), CellValue::Int(0)).await;
            }
        }
        ctx.note("ccsynch", || format!("end n={count}"));
        ctx.cell_write(field(tmp, WAIT), CellValue::Int(0)).await;
        mine.ok_or_else(|| SimError::Protocol { core: me, msg: "combiner's own request got no reply".into() })
    }
}
