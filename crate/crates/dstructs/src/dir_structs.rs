//! Directory-based stack, queue, deque, synchronous queue and delay queue. A synchronizer
//! process hands out keys; elements live in the [`Directory`].

use std::collections::{BTreeMap, VecDeque};

use simcore::{CoreId, Sim, SimError, SimResult};

use crate::directory::Directory;
use crate::msg::{Msg, Op, Req};
use crate::net::{Client, ServerIo, ELIMINATED};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyncKind {
    Stack,
    Queue,
    Deque,
    SyncQueue,
}

/// Stack keys pack a slot (position in the stack) and a per-slot generation, so a slot
/// reused while an older element is still in flight never collides in the directory.
pub fn stack_key(slot: i64, gen: u64) -> i64 {
    slot + ((gen as i64) << 32)
}

/// Client-side handle of a directory-based structure.
#[derive(Clone, Debug)]
pub struct DirStruct {
    pub sync: CoreId,
    pub dir: Directory,
}

impl DirStruct {
    pub fn spawn_sync(&self, sim: &mut Sim<Msg>, kind: SyncKind) -> SimResult<()> {
        let dir = self.dir.clone();
        sim.spawn(self.sync, "synchronizer", true, move |ctx| {
            let io = ServerIo::new(ctx);
            async move {
                match kind {
                    SyncKind::Stack => stack_sync(io).await,
                    SyncKind::Queue => queue_sync(io).await,
                    SyncKind::Deque => deque_sync(io, dir).await,
                    SyncKind::SyncQueue => syncqueue_sync(io).await,
                }
            }
        })
    }

    pub async fn push(&self, cl: &Client, data: i64) -> SimResult<bool> {
        let r = cl.call(self.sync, cl.req(Op::Push).data(data)).await?;
        if r.aux == ELIMINATED {
            return Ok(true);
        }
        self.dir.insert(cl, r.data, data).await
    }

    pub async fn pop(&self, cl: &Client) -> SimResult<Option<i64>> {
        let r = cl.call(self.sync, cl.req(Op::Pop)).await?;
        if r.aux == ELIMINATED {
            return Ok(Some(r.data));
        }
        if !r.ok {
            return Ok(None);
        }
        // the matching push may not have reached the directory yet
        loop {
            if let Some(d) = self.dir.delete(cl, r.data).await? {
                return Ok(Some(d));
            }
        }
    }

    pub async fn enqueue(&self, cl: &Client, data: i64) -> SimResult<()> {
        let r = cl.call(self.sync, cl.req(Op::Enq).data(data)).await?;
        self.dir.insert(cl, r.data, data).await?;
        Ok(())
    }

    pub async fn dequeue(&self, cl: &Client) -> SimResult<Option<i64>> {
        let r = cl.call(self.sync, cl.req(Op::Deq)).await?;
        if !r.ok {
            return Ok(None);
        }
        Ok(Some(self.dir.block_delete(cl, r.data).await?))
    }

    /// Deque operation on one end. Returns the removed value for dequeues, `Some(0)` for enqueues,
    /// `None` on an empty deque.
    pub async fn deque_op(&self, cl: &Client, op: Op, data: i64) -> SimResult<Option<i64>> {
        let r = cl.call(self.sync, cl.req(op).data(data)).await?;
        if r.aux == ELIMINATED {
            return Ok(Some(r.data));
        }
        match op {
            Op::EnqH | Op::EnqT => {
                self.dir.insert(cl, r.data, data).await?;
                Ok(Some(0))
            }
            _ => Ok(r.ok.then_some(r.data)),
        }
    }

    /// Synchronous enqueue: returns once a dequeuer has been matched with this element.
    pub async fn sync_enqueue(&self, cl: &Client, data: i64) -> SimResult<()> {
        self.enqueue(cl, data).await
    }

    pub async fn sync_dequeue(&self, cl: &Client) -> SimResult<i64> {
        let r = cl.call(self.sync, cl.req(Op::Deq)).await?;
        self.dir.block_delete(cl, r.data).await
    }

    /// Delay-queue enqueue: the element may not be dequeued before `delay` steps from now.
    pub async fn delay_enqueue(&self, cl: &Client, data: i64, delay: u64) -> SimResult<()> {
        let not_before = cl.ctx.now() + delay;
        let r = cl.call(self.sync, cl.req(Op::Enq).data(data)).await?;
        self.dir.insert_at(cl, r.data, data, not_before).await?;
        Ok(())
    }
}

fn unexpected(io: &ServerIo, m: &Msg) -> SimError {
    SimError::Protocol { core: io.me(), msg: format!("synchronizer got unexpected {m:?}") }
}

async fn next_req(io: &mut ServerIo) -> SimResult<Req> {
    let (_, m) = io.next().await?;
    match m {
        Msg::Req(r) => Ok(r),
        other => Err(unexpected(io, &other)),
    }
}

#[derive(Default)]
struct StackCounter {
    top: i64,
    push_gen: BTreeMap<i64, u64>,
    pop_gen: BTreeMap<i64, u64>,
}

impl StackCounter {
    fn push(&mut self) -> i64 {
        self.top += 1;
        let g = self.push_gen.entry(self.top).or_default();
        *g += 1;
        stack_key(self.top, *g - 1)
    }

    fn pop(&mut self) -> Option<i64> {
        if self.top == -1 {
            return None;
        }
        let g = self.pop_gen.entry(self.top).or_default();
        *g += 1;
        let k = stack_key(self.top, *g - 1);
        self.top -= 1;
        Some(k)
    }
}

async fn stack_sync(mut io: ServerIo) -> SimResult<()> {
    let mut c = StackCounter { top: -1, ..Default::default() };
    loop {
        let r = next_req(&mut io).await?;
        match r.op {
            Op::Push => {
                let k = c.push();
                io.ctx.note("grant", || format!("push key={k}"));
                io.reply(r.reply(true, k)).await?;
            }
            Op::Pop => {
                let k = c.pop();
                io.ctx.note("grant", || format!("pop key={}", k.unwrap_or(-1)));
                io.reply(r.reply(k.is_some(), k.unwrap_or(-1))).await?;
            }
            Op::Combine => {
                let insert_keys: Vec<i64> = (0..r.key).map(|_| c.push()).collect();
                let remove_keys: Vec<Option<i64>> = (0..r.aux).map(|_| c.pop()).collect();
                io.ctx.note("grant", || format!("combine pushes={:?} pops={:?}", insert_keys, remove_keys));
                io.send(r.cid, Msg::Grant { seq: r.seq, insert_keys, remove_keys }).await?;
            }
            _ => return Err(unexpected(&io, &Msg::Req(r))),
        }
    }
}

async fn queue_sync(mut io: ServerIo) -> SimResult<()> {
    let (mut head, mut tail) = (0i64, 0i64);
    loop {
        let r = next_req(&mut io).await?;
        match r.op {
            Op::Enq => {
                tail += 1;
                io.reply(r.reply(true, tail)).await?;
            }
            Op::Deq => {
                if head < tail {
                    head += 1;
                    io.reply(r.reply(true, head)).await?;
                } else {
                    io.reply(r.reply(false, -1)).await?;
                }
            }
            Op::Combine => {
                let insert_keys: Vec<i64> = (1..=r.key).map(|i| tail + i).collect();
                tail += r.key;
                let remove_keys: Vec<Option<i64>> = (0..r.aux)
                    .map(|_| {
                        (head < tail).then(|| {
                            head += 1;
                            head
                        })
                    })
                    .collect();
                io.ctx.note("grant", || format!("combine enq={} deq={} head={head} tail={tail}", r.key, r.aux));
                io.send(r.cid, Msg::Grant { seq: r.seq, insert_keys, remove_keys }).await?;
            }
            _ => return Err(unexpected(&io, &Msg::Req(r))),
        }
    }
}

async fn deque_sync(mut io: ServerIo, dir: Directory) -> SimResult<()> {
    let (mut head, mut tail) = (0i64, 0i64);
    let me = Client::new(io.ctx.clone(), None);
    loop {
        let r = next_req(&mut io).await?;
        match r.op {
            Op::EnqT => {
                tail += 1;
                io.reply(r.reply(true, tail)).await?;
            }
            Op::EnqH => {
                io.reply(r.reply(true, head)).await?;
                head -= 1;
            }
            Op::DeqT | Op::DeqH if head == tail => io.reply(r.reply(false, -1)).await?,
            Op::DeqT | Op::DeqH => {
                let key = if r.op == Op::DeqT {
                    tail -= 1;
                    tail + 1
                } else {
                    head += 1;
                    head
                };
                let data = loop {
                    if let Some(d) = dir.delete(&me, key).await? {
                        break d;
                    }
                };
                io.reply(r.reply(true, data)).await?;
            }
            _ => return Err(unexpected(&io, &Msg::Req(r))),
        }
    }
}

async fn syncqueue_sync(mut io: ServerIo) -> SimResult<()> {
    let (mut head, mut tail) = (0i64, 0i64);
    let mut parked: VecDeque<(i64, Req)> = VecDeque::new();
    loop {
        let r = next_req(&mut io).await?;
        match r.op {
            Op::Enq => {
                tail += 1;
                if head >= tail {
                    io.reply(r.reply(true, tail)).await?;
                } else {
                    parked.push_back((tail, r));
                }
            }
            Op::Deq => {
                head += 1;
                io.reply(r.reply(true, head)).await?;
                while parked.front().is_some_and(|(k, _)| *k <= head) {
                    let (k, e) = parked.pop_front().expect("checked");
                    io.reply(e.reply(true, k)).await?;
                }
            }
            _ => return Err(unexpected(&io, &Msg::Req(r))),
        }
    }
}
