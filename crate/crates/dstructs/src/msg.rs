use simcore::{CoreId, Message};

/// Operation codes shared by every protocol in this crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    // directory
    DInsert,
    DSearch,
    DDelete,
    DBDelete,
    // stacks, queues, deques
    Push,
    Pop,
    Enq,
    Deq,
    EnqH,
    EnqT,
    DeqH,
    DeqT,
    /// Island master to synchronizer: `key` = inserting count, `aux` = removing count.
    Combine,
    // lists
    Insert,
    Search,
    Delete,
    // manager primitives
    Rd,
    Wr,
    Faa,
    Swp,
    Cas,
    Rl,
    Ru,
    Wl,
    Wu,
    Tl,
}

impl Op {
    pub const ALL: [Op; 26] = [
        Op::DInsert,
        Op::DSearch,
        Op::DDelete,
        Op::DBDelete,
        Op::Push,
        Op::Pop,
        Op::Enq,
        Op::Deq,
        Op::EnqH,
        Op::EnqT,
        Op::DeqH,
        Op::DeqT,
        Op::Combine,
        Op::Insert,
        Op::Search,
        Op::Delete,
        Op::Rd,
        Op::Wr,
        Op::Faa,
        Op::Swp,
        Op::Cas,
        Op::Rl,
        Op::Ru,
        Op::Wl,
        Op::Wu,
        Op::Tl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Op::DInsert => "INSERT",
            Op::DSearch => "SEARCH",
            Op::DDelete => "DELETE",
            Op::DBDelete => "BDELETE",
            Op::Push => "PUSH",
            Op::Pop => "POP",
            Op::Enq => "ENQ",
            Op::Deq => "DEQ",
            Op::EnqH => "ENQ_H",
            Op::EnqT => "ENQ_T",
            Op::DeqH => "DEQ_H",
            Op::DeqT => "DEQ_T",
            Op::Combine => "COMBINE",
            Op::Insert => "L_INSERT",
            Op::Search => "L_SEARCH",
            Op::Delete => "L_DELETE",
            Op::Rd => "RD",
            Op::Wr => "WR",
            Op::Faa => "FAA",
            Op::Swp => "SWP",
            Op::Cas => "CAS",
            Op::Rl => "RL",
            Op::Ru => "RU",
            Op::Wl => "WL",
            Op::Wu => "WU",
            Op::Tl => "TL",
        }
    }

    /// Operations that add an element.
    pub fn is_insert(self) -> bool {
        matches!(self, Op::Push | Op::Enq | Op::EnqH | Op::EnqT)
    }

    /// Operations that remove an element.
    pub fn is_remove(self) -> bool {
        matches!(self, Op::Pop | Op::Deq | Op::DeqH | Op::DeqT)
    }

    /// The opposite operation on the same end, for elimination.
    pub fn partner(self) -> Option<Op> {
        match self {
            Op::Push => Some(Op::Pop),
            Op::Pop => Some(Op::Push),
            Op::EnqH => Some(Op::DeqH),
            Op::DeqH => Some(Op::EnqH),
            Op::EnqT => Some(Op::DeqT),
            Op::DeqT => Some(Op::EnqT),
            _ => None,
        }
    }

    fn code(self) -> u8 {
        Op::ALL.iter().position(|o| *o == self).expect("listed") as u8
    }

    fn from_code(c: u8) -> Option<Op> {
        Op::ALL.get(c as usize).copied()
    }
}

/// Token flag carried by forwarded requests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Tk {
    #[default]
    None,
    /// Stack and list token.
    Token,
    Head,
    Tail,
    /// Alternative list insert, phase 1 (presence probe).
    Probe,
    /// Alternative list insert, phase 2 (targeted insert).
    Target,
}

/// Request envelope. Field meaning depends on the protocol; unused fields stay at their defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct Req {
    pub op: Op,
    /// Client that issued the request.
    pub cid: CoreId,
    /// Client-local sequence number; replies echo it.
    pub seq: u64,
    pub key: i64,
    pub data: i64,
    /// Secondary operand (CAS new value, combine count, delay, ...).
    pub aux: i64,
    /// Forwarding server id, or -1 when the message comes straight from a client.
    pub sid: i64,
    pub tk: Tk,
    pub mloop: bool,
    /// Token state travelling with a forwarded request (token queue/deque only).
    pub token: Option<Box<crate::token::TokenPayload>>,
}

impl Req {
    pub fn new(op: Op, cid: CoreId, seq: u64) -> Self {
        Req { op, cid, seq, key: 0, data: 0, aux: 0, sid: -1, tk: Tk::None, mloop: false, token: None }
    }

    pub fn key(mut self, k: i64) -> Self {
        self.key = k;
        self
    }

    pub fn data(mut self, d: i64) -> Self {
        self.data = d;
        self
    }

    pub fn aux(mut self, a: i64) -> Self {
        self.aux = a;
        self
    }

    pub fn tk(mut self, tk: Tk) -> Self {
        self.tk = tk;
        self
    }

    pub fn reply(&self, ok: bool, data: i64) -> Reply {
        Reply { op: self.op, cid: self.cid, seq: self.seq, ok, data, aux: 0, sid: -1 }
    }

    pub const WIRE_BYTES: usize = 48;

    /// Fixed-size encoding for DMA transfers of request batches. Token payloads never travel by DMA.
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.op.code());
        out.push(match self.tk {
            Tk::None => 0,
            Tk::Token => 1,
            Tk::Head => 2,
            Tk::Tail => 3,
            Tk::Probe => 4,
            Tk::Target => 5,
        });
        out.push(self.mloop as u8);
        out.push(0);
        out.extend_from_slice(&(self.cid as u32).to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        for v in [self.key, self.data, self.aux, self.sid] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn decode(b: &[u8]) -> Option<Req> {
        if b.len() < Self::WIRE_BYTES {
            return None;
        }
        let i64_at = |o: usize| i64::from_le_bytes(b[o..o + 8].try_into().expect("8 bytes"));
        let tk = match b[1] {
            0 => Tk::None,
            1 => Tk::Token,
            2 => Tk::Head,
            3 => Tk::Tail,
            4 => Tk::Probe,
            5 => Tk::Target,
            _ => return None,
        };
        Some(Req {
            op: Op::from_code(b[0])?,
            tk,
            mloop: b[2] != 0,
            cid: u32::from_le_bytes(b[4..8].try_into().expect("4 bytes")) as CoreId,
            seq: u64::from_le_bytes(b[8..16].try_into().expect("8 bytes")),
            key: i64_at(16),
            data: i64_at(24),
            aux: i64_at(32),
            sid: i64_at(40),
            token: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reply {
    pub op: Op,
    pub cid: CoreId,
    pub seq: u64,
    /// ACK (true) or NACK (false).
    pub ok: bool,
    pub data: i64,
    pub aux: i64,
    /// Responding server id, cached by token-structure clients.
    pub sid: i64,
}

impl Reply {
    pub fn from_sid(mut self, sid: usize) -> Self {
        self.sid = sid as i64;
        self
    }

    pub fn aux(mut self, a: i64) -> Self {
        self.aux = a;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Msg {
    Req(Req),
    Reply(Reply),
    /// Client to island master: a request to be batched toward `dest`.
    Up { dest: CoreId, req: Req },
    /// Island master to server: a batch of requests sent inline.
    Batch { master: CoreId, reqs: Vec<Req> },
    /// Island master to server: a batch already copied by DMA into the server's memory.
    BatchDma { master: CoreId, slot: usize, count: usize },
    /// Server to island master: replies for a batch's clients. `slot` frees a DMA slot.
    BatchReply { slot: Option<usize>, replies: Vec<Reply> },
    /// Synchronizer to island master: keys for a combined request.
    Grant { seq: u64, insert_keys: Vec<i64>, remove_keys: Vec<Option<i64>> },
    /// Sorted list: open a chunk move, carrying the sender's client vector.
    ReqCv { from: usize, cv: Vec<u64> },
    Cv(Vec<u64>),
    /// Sorted list: `count` (key, data) pairs were copied by DMA into the receiver's chunk inbox.
    Chunk { from: usize, count: usize },
    ChunkAck(bool),
}

impl Message for Msg {
    fn op(&self) -> &'static str {
        match self {
            Msg::Req(r) => r.op.name(),
            Msg::Reply(r) => {
                if r.ok {
                    "ACK"
                } else {
                    "NACK"
                }
            }
            Msg::Up { .. } => "UP",
            Msg::Batch { .. } => "BATCH",
            Msg::BatchDma { .. } => "BATCH_DMA",
            Msg::BatchReply { .. } => "BATCH_REPLY",
            Msg::Grant { .. } => "GRANT",
            Msg::ReqCv { .. } => "REQC",
            Msg::Cv(_) => "CV",
            Msg::Chunk { .. } => "CHUNK",
            Msg::ChunkAck(_) => "CHUNK_ACK",
        }
    }

    fn units(&self) -> u32 {
        match self {
            Msg::Batch { reqs, .. } => reqs.len().max(1) as u32,
            Msg::BatchReply { replies, .. } => replies.len().max(1) as u32,
            _ => 1,
        }
    }
}
