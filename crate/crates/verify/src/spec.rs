use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Debug;
use std::hash::Hash;

use crate::Val;

/// Sequential specification. `outcomes` lists every admissible (result, next state)
/// pair, so specifications may be nondeterministic (for example a capacity refusal
/// that is allowed but not required).
pub trait Spec {
    type State: Clone + Eq + Hash + Debug;

    fn name(&self) -> &'static str;
    fn init(&self) -> Self::State;
    /// Operation names with their argument counts.
    fn ops(&self) -> &'static [(&'static str, usize)];
    fn outcomes(&self, s: &Self::State, op: &str, args: &[i64]) -> Vec<(Val, Self::State)>;

    /// Deterministic replay helper: first admissible outcome.
    fn apply(&self, s: &Self::State, op: &str, args: &[i64]) -> Option<(Val, Self::State)> {
        self.outcomes(s, op, args).into_iter().next()
    }
}

/// When an insertion may or must be refused as full.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Capacity {
    /// Refusal admissible once size >= this.
    pub may: Option<usize>,
    /// Refusal required once size >= this.
    pub must: Option<usize>,
}

impl Capacity {
    pub const UNBOUNDED: Capacity = Capacity { may: None, must: None };

    pub fn exact(n: usize) -> Self {
        Capacity { may: Some(n), must: Some(n) }
    }

    /// Static token structures with `servers` chunks of `chunk` slots: wrap-around can leave
    /// up to one chunk unused, so a refusal is admissible from (servers-1)*chunk elements on.
    pub fn chunked(servers: usize, chunk: usize) -> Self {
        Capacity { may: Some(servers.saturating_sub(1) * chunk), must: Some(servers * chunk) }
    }

    fn insert_outcomes<S: Clone>(&self, size: usize, s: &S, inserted: impl FnOnce() -> S) -> Vec<(Val, S)> {
        let may = self.may.is_some_and(|m| size >= m);
        let must = self.must.is_some_and(|m| size >= m);
        let mut v = Vec::with_capacity(2);
        if !must {
            v.push((Val::Unit, inserted()));
        }
        if may || must {
            v.push((Val::Full, s.clone()));
        }
        v
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct StackSpec {
    pub cap: Capacity,
}

impl Spec for StackSpec {
    type State = Vec<i64>;

    fn name(&self) -> &'static str {
        "stack"
    }
    fn init(&self) -> Vec<i64> {
        Vec::new()
    }
    fn ops(&self) -> &'static [(&'static str, usize)] {
        &[("push", 1), ("pop", 0)]
    }
    fn outcomes(&self, s: &Vec<i64>, op: &str, args: &[i64]) -> Vec<(Val, Vec<i64>)> {
        match op {
            "push" => self.cap.insert_outcomes(s.len(), s, || {
                let mut t = s.clone();
                t.push(args[0]);
                t
            }),
            "pop" => match s.last() {
                None => vec![(Val::Nil, s.clone())],
                Some(&v) => vec![(Val::Int(v), s[..s.len() - 1].to_vec())],
            },
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct QueueSpec {
    pub cap: Capacity,
}

impl Spec for QueueSpec {
    type State = VecDeque<i64>;

    fn name(&self) -> &'static str {
        "queue"
    }
    fn init(&self) -> VecDeque<i64> {
        VecDeque::new()
    }
    fn ops(&self) -> &'static [(&'static str, usize)] {
        &[("enq", 1), ("deq", 0)]
    }
    fn outcomes(&self, s: &VecDeque<i64>, op: &str, args: &[i64]) -> Vec<(Val, VecDeque<i64>)> {
        match op {
            "enq" => self.cap.insert_outcomes(s.len(), s, || {
                let mut t = s.clone();
                t.push_back(args[0]);
                t
            }),
            "deq" => {
                let mut t = s.clone();
                match t.pop_front() {
                    None => vec![(Val::Nil, t)],
                    Some(v) => vec![(Val::Int(v), t)],
                }
            }
            _ => Vec::new(),
        }
    }
}

/// Double-ended queue; `enq_h`/`deq_h` act on the head, `enq_t`/`deq_t` on the tail.
#[derive(Clone, Copy, Debug, Default)]
pub struct DequeSpec {
    pub cap: Capacity,
}

impl Spec for DequeSpec {
    type State = VecDeque<i64>;

    fn name(&self) -> &'static str {
        "deque"
    }
    fn init(&self) -> VecDeque<i64> {
        VecDeque::new()
    }
    fn ops(&self) -> &'static [(&'static str, usize)] {
        &[("enq_h", 1), ("enq_t", 1), ("deq_h", 0), ("deq_t", 0)]
    }
    fn outcomes(&self, s: &VecDeque<i64>, op: &str, args: &[i64]) -> Vec<(Val, VecDeque<i64>)> {
        let mut t = s.clone();
        match op {
            "enq_h" => self.cap.insert_outcomes(s.len(), s, || {
                t.push_front(args[0]);
                t
            }),
            "enq_t" => self.cap.insert_outcomes(s.len(), s, || {
                t.push_back(args[0]);
                t
            }),
            "deq_h" | "deq_t" => {
                let v = if op == "deq_h" { t.pop_front() } else { t.pop_back() };
                vec![(v.map_or(Val::Nil, Val::Int), t)]
            }
            _ => Vec::new(),
        }
    }
}

/// Set of integer keys. With `allow_full`, an insert of an absent key may also
/// answer `false` without effect (static capacity exhausted).
#[derive(Clone, Copy, Debug, Default)]
pub struct SetSpec {
    pub allow_full: bool,
}

impl Spec for SetSpec {
    type State = BTreeSet<i64>;

    fn name(&self) -> &'static str {
        "set"
    }
    fn init(&self) -> BTreeSet<i64> {
        BTreeSet::new()
    }
    fn ops(&self) -> &'static [(&'static str, usize)] {
        &[("insert", 1), ("delete", 1), ("search", 1)]
    }
    fn outcomes(&self, s: &BTreeSet<i64>, op: &str, args: &[i64]) -> Vec<(Val, BTreeSet<i64>)> {
        let k = args[0];
        let has = s.contains(&k);
        match op {
            "insert" if has => vec![(Val::Bool(false), s.clone())],
            "insert" => {
                let mut t = s.clone();
                t.insert(k);
                let mut v = vec![(Val::Bool(true), t)];
                if self.allow_full {
                    v.push((Val::Bool(false), s.clone()));
                }
                v
            }
            "delete" => {
                let mut t = s.clone();
                t.remove(&k);
                vec![(Val::Bool(has), t)]
            }
            "search" => vec![(Val::Bool(has), s.clone())],
            _ => Vec::new(),
        }
    }
}

/// A bank of integer registers indexed by address (first argument), all starting at 0.
///
/// | op | args | result |
/// |----|------|--------|
/// | `read` | a | value |
/// | `write` | a, v | unit |
/// | `faa` | a, d | new value |
/// | `swap`, `gas` | a, v | old value |
/// | `cas` | a, old, new | previous value |
/// | `lazy_cas` | a, old, new | bool; `false` is always admissible |
#[derive(Clone, Copy, Debug, Default)]
pub struct RegisterSpec;

impl Spec for RegisterSpec {
    type State = BTreeMap<i64, i64>;

    fn name(&self) -> &'static str {
        "register"
    }
    fn init(&self) -> BTreeMap<i64, i64> {
        BTreeMap::new()
    }
    fn ops(&self) -> &'static [(&'static str, usize)] {
        &[("read", 1), ("write", 2), ("faa", 2), ("swap", 2), ("gas", 2), ("cas", 3), ("lazy_cas", 3)]
    }
    fn outcomes(&self, s: &BTreeMap<i64, i64>, op: &str, args: &[i64]) -> Vec<(Val, BTreeMap<i64, i64>)> {
        let a = args[0];
        let cur = s.get(&a).copied().unwrap_or(0);
        let set = |v: i64| {
            let mut t = s.clone();
            if v == 0 {
                t.remove(&a);
            } else {
                t.insert(a, v);
            }
            t
        };
        match op {
            "read" => vec![(Val::Int(cur), s.clone())],
            "write" => vec![(Val::Unit, set(args[1]))],
            "faa" => vec![(Val::Int(cur + args[1]), set(cur + args[1]))],
            "swap" | "gas" => vec![(Val::Int(cur), set(args[1]))],
            "cas" => {
                let next = if cur == args[1] { set(args[2]) } else { s.clone() };
                vec![(Val::Int(cur), next)]
            }
            "lazy_cas" => {
                let mut v = vec![(Val::Bool(false), s.clone())];
                if cur == args[1] {
                    v.push((Val::Bool(true), set(args[2])));
                }
                v
            }
            _ => Vec::new(),
        }
    }
}
