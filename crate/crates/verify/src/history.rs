use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::VerifyError;

/// A value returned by an operation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Val {
    Unit,
    Bool(bool),
    Int(i64),
    /// Empty structure (pop/deq on empty).
    Nil,
    /// Capacity refusal (push/enq on a full static structure).
    Full,
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Unit => f.write_str("unit"),
            Val::Bool(b) => write!(f, "{b}"),
            Val::Int(v) => write!(f, "{v}"),
            Val::Nil => f.write_str("nil"),
            Val::Full => f.write_str("full"),
        }
    }
}

impl FromStr for Val {
    type Err = VerifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "unit" => Val::Unit,
            "true" => Val::Bool(true),
            "false" => Val::Bool(false),
            "nil" => Val::Nil,
            "full" => Val::Full,
            _ => Val::Int(s.parse().map_err(|_| VerifyError::Parse(format!("bad result value {s:?}")))?),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Invoke,
    Respond,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistoryEvent {
    /// Position in the total order of the run.
    pub idx: u64,
    pub pid: usize,
    pub kind: Kind,
    pub op: String,
    pub args: Vec<i64>,
    /// Set on responses only.
    pub result: Option<Val>,
}

/// One operation extracted from a history: its invocation/response interval.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Operation {
    pub pid: usize,
    pub op: String,
    pub args: Vec<i64>,
    pub result: Option<Val>,
    pub invoked: u64,
    /// `None` while pending.
    pub responded: Option<u64>,
}

impl Operation {
    pub fn pending(&self) -> bool {
        self.responded.is_none()
    }

    /// Real-time order: `self` finished before `other` started.
    pub fn precedes(&self, other: &Operation) -> bool {
        self.responded.is_some_and(|r| r < other.invoked)
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<String> = self.args.iter().map(i64::to_string).collect();
        write!(f, "p{} {}({})", self.pid, self.op, args.join(","))?;
        match &self.result {
            Some(r) => write!(f, " -> {r}"),
            None => f.write_str(" pending"),
        }
    }
}

/// A well-formed history: per process, invocations and responses alternate.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct History {
    events: Vec<HistoryEvent>,
    open: Vec<Option<usize>>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[HistoryEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    fn open_slot(&mut self, pid: usize) -> &mut Option<usize> {
        if self.open.len() <= pid {
            self.open.resize(pid + 1, None);
        }
        &mut self.open[pid]
    }

    /// Appends an event, rejecting anything that breaks per-process alternation
    /// or the total order of indices.
    pub fn record(&mut self, ev: HistoryEvent) -> Result<(), VerifyError> {
        if let Some(last) = self.events.last() {
            if ev.idx <= last.idx {
                return Err(VerifyError::Malformed(format!("event index {} not after {}", ev.idx, last.idx)));
            }
        }
        let at = self.events.len();
        let slot = self.open_slot(ev.pid);
        match (ev.kind, *slot) {
            (Kind::Invoke, None) => *slot = Some(at),
            (Kind::Invoke, Some(_)) => {
                return Err(VerifyError::Malformed(format!("process {} invokes {} with an operation still open", ev.pid, ev.op)))
            }
            (Kind::Respond, None) => {
                return Err(VerifyError::Malformed(format!("process {} responds to {} without an invocation", ev.pid, ev.op)))
            }
            (Kind::Respond, Some(i)) => {
                let inv = &self.events[i];
                if inv.op != ev.op {
                    return Err(VerifyError::Malformed(format!(
                        "process {} responds to {} but invoked {}",
                        ev.pid, ev.op, inv.op
                    )));
                }
                if ev.result.is_none() {
                    return Err(VerifyError::Malformed(format!("response of {} carries no result", ev.op)));
                }
                self.open[ev.pid] = None;
            }
        }
        self.events.push(ev);
        Ok(())
    }

    fn next_idx(&self) -> u64 {
        self.events.last().map_or(0, |e| e.idx + 1)
    }

    pub fn invoke(&mut self, pid: usize, op: &str, args: &[i64]) -> Result<(), VerifyError> {
        let idx = self.next_idx();
        self.record(HistoryEvent { idx, pid, kind: Kind::Invoke, op: op.to_string(), args: args.to_vec(), result: None })
    }

    pub fn respond(&mut self, pid: usize, result: Val) -> Result<(), VerifyError> {
        let idx = self.next_idx();
        let Some(i) = self.open.get(pid).copied().flatten() else {
            return Err(VerifyError::Malformed(format!("process {pid} responds without an invocation")));
        };
        let (op, args) = (self.events[i].op.clone(), self.events[i].args.clone());
        self.record(HistoryEvent { idx, pid, kind: Kind::Respond, op, args, result: Some(result) })
    }

    /// Operations in invocation order.
    pub fn operations(&self) -> Vec<Operation> {
        let mut ops: Vec<Operation> = Vec::new();
        let mut open: Vec<Option<usize>> = Vec::new();
        for e in &self.events {
            if open.len() <= e.pid {
                open.resize(e.pid + 1, None);
            }
            match e.kind {
                Kind::Invoke => {
                    open[e.pid] = Some(ops.len());
                    ops.push(Operation {
                        pid: e.pid,
                        op: e.op.clone(),
                        args: e.args.clone(),
                        result: None,
                        invoked: e.idx,
                        responded: None,
                    });
                }
                Kind::Respond => {
                    let i = open[e.pid].take().expect("record() keeps histories well formed");
                    ops[i].result = e.result.clone();
                    ops[i].responded = Some(e.idx);
                }
            }
        }
        ops
    }

    /// The first `n` events as a history of its own.
    pub fn prefix(&self, n: usize) -> History {
        let mut h = History::new();
        for e in self.events.iter().take(n) {
            h.record(e.clone()).expect("prefix of a well-formed history");
        }
        h
    }

    pub const HEADER: &'static str = "idx,pid,kind,op,args,result";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for e in &self.events {
            let args: Vec<String> = e.args.iter().map(i64::to_string).collect();
            let kind = match e.kind {
                Kind::Invoke => "invoke",
                Kind::Respond => "respond",
            };
            let res = e.result.as_ref().map(Val::to_string).unwrap_or_default();
            writeln!(w, "{},{},{},{},{},{}", e.idx, e.pid, kind, e.op, args.join(";"), res)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("history is utf-8")
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<History, VerifyError> {
        let mut h = History::new();
        for (n, line) in r.lines().enumerate() {
            let line = line.map_err(|e| VerifyError::Parse(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() || (n == 0 && line == Self::HEADER) {
                continue;
            }
            let bad = |what: &str| VerifyError::Parse(format!("line {}: {what}", n + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let kind = match f[2] {
                "invoke" => Kind::Invoke,
                "respond" => Kind::Respond,
                _ => return Err(bad("kind must be invoke or respond")),
            };
            let args = if f[4].is_empty() {
                Vec::new()
            } else {
                f[4].split(';').map(|a| a.parse::<i64>().map_err(|_| bad("bad argument"))).collect::<Result<_, _>>()?
            };
            let result = match (kind, f[5]) {
                (Kind::Invoke, "") => None,
                (Kind::Invoke, _) => return Err(bad("invocation with a result")),
                (Kind::Respond, s) => Some(s.parse::<Val>()?),
            };
            h.record(HistoryEvent {
                idx: f[0].parse().map_err(|_| bad("bad idx"))?,
                pid: f[1].parse().map_err(|_| bad("bad pid"))?,
                kind,
                op: f[3].to_string(),
                args,
                result,
            })?;
        }
        Ok(h)
    }
}
