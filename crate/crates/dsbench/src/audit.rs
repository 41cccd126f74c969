//! Event-log and history audits. Each returns the list of violations found; empty means clean.

use std::collections::{BTreeMap, BTreeSet};

use simcore::{CoreId, EventKind, EventLog};
use verify::{History, Operation, Val};

/// Value of `key=` in a note detail.
pub fn field<'a>(detail: &'a str, key: &str) -> Option<&'a str> {
    detail.split_whitespace().find_map(|w| w.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

/// Token ownership: per token kind, an `acquire` must find the token free and a `release`
/// must come from the current holder.
pub fn token_ownership(log: &EventLog) -> Vec<String> {
    let mut holder: BTreeMap<String, CoreId> = BTreeMap::new();
    let mut bad = Vec::new();
    for e in log.notes("token") {
        let (Some(core), Some(kind)) = (e.src, field(&e.detail, "kind")) else {
            bad.push(format!("step {}: malformed token note {:?}", e.step, e.detail));
            continue;
        };
        if e.detail.starts_with("acquire") {
            if let Some(h) = holder.insert(kind.to_string(), core) {
                bad.push(format!("step {}: core {core} acquired the {kind} token still held by {h}", e.step));
            }
        } else if holder.remove(kind) != Some(core) {
            bad.push(format!("step {}: core {core} released a {kind} token it did not hold", e.step));
        }
    }
    bad
}

/// Every token forward must have been taken with its precondition satisfied.
pub fn forward_preconditions(log: &EventLog) -> Vec<String> {
    log.notes("fwd")
        .filter(|e| field(&e.detail, "ok") != Some("true"))
        .map(|e| format!("step {}: core {:?} forwarded with {}", e.step, e.src, e.detail))
        .collect()
}

/// Reply envelopes (ACK or NACK) sent to each client core.
pub fn replies_per_client(log: &EventLog, clients: &[CoreId]) -> BTreeMap<CoreId, usize> {
    let mut out: BTreeMap<CoreId, usize> = clients.iter().map(|c| (*c, 0)).collect();
    for e in &log.events {
        if e.kind == EventKind::Send && matches!(e.op.as_str(), "ACK" | "NACK") {
            if let Some(n) = e.dst.and_then(|d| out.get_mut(&d)) {
                *n += 1;
            }
        }
    }
    out
}

/// Each client must receive exactly one reply per completed operation.
pub fn exactly_once(log: &EventLog, history: &History, clients: &[CoreId]) -> Vec<String> {
    let mut ops: BTreeMap<CoreId, usize> = BTreeMap::new();
    for o in history.operations() {
        *ops.entry(o.pid).or_default() += 1;
    }
    replies_per_client(log, clients)
        .into_iter()
        .filter(|(c, n)| ops.get(c).copied().unwrap_or(0) != *n)
        .map(|(c, n)| format!("client {c} got {n} replies for {} operations", ops.get(&c).copied().unwrap_or(0)))
        .collect()
}

/// Readers-writers safety and writer priority from the manager's `rw` notes.
pub fn rw_monitor(log: &EventLog) -> Vec<String> {
    #[derive(Default)]
    struct Mon {
        readers: BTreeSet<CoreId>,
        writer: Option<CoreId>,
        /// cid -> (arrival index, is write) for requests not yet granted.
        waiting: BTreeMap<CoreId, (usize, bool)>,
    }
    let mut mons: BTreeMap<String, Mon> = BTreeMap::new();
    let mut bad = Vec::new();
    for (i, e) in log.notes("rw").enumerate() {
        let d = &e.detail;
        let (Some(mon), Some(cid)) = (field(d, "mon"), field(d, "cid").and_then(|c| c.parse::<CoreId>().ok())) else {
            bad.push(format!("malformed rw note {d:?}"));
            continue;
        };
        let m = mons.entry(mon.to_string()).or_default();
        if d.starts_with("arrive") {
            match field(d, "op") {
                Some("RL") => {
                    m.waiting.insert(cid, (i, false));
                }
                Some("WL") | Some("TL") => {
                    m.waiting.insert(cid, (i, true));
                }
                _ => {}
            }
        } else if d.starts_with("grant") {
            let Some((at, _)) = m.waiting.remove(&cid) else {
                bad.push(format!("step {}: grant to {cid} without a request", e.step));
                continue;
            };
            if field(d, "kind") == Some("write") {
                if m.writer.is_some() || !m.readers.is_empty() {
                    bad.push(format!("step {}: writer {cid} admitted while held by {:?}/{:?}", e.step, m.writer, m.readers));
                }
                m.writer = Some(cid);
            } else {
                if let Some(w) = m.writer {
                    bad.push(format!("step {}: reader {cid} admitted while writer {w} holds", e.step));
                }
                if let Some((w, _)) = m.waiting.iter().find(|(_, (a, write))| *write && *a < at) {
                    bad.push(format!("step {}: reader {cid} admitted before earlier writer {w}", e.step));
                }
                m.readers.insert(cid);
            }
        } else if d.starts_with("refuse") {
            m.waiting.remove(&cid);
        } else if d.starts_with("release") {
            if field(d, "kind") == Some("write") {
                if m.writer != Some(cid) {
                    bad.push(format!("step {}: {cid} released a write lock it did not hold", e.step));
                }
                m.writer = None;
            } else if !m.readers.remove(&cid) {
                bad.push(format!("step {}: {cid} released a read lock it did not hold", e.step));
            }
        }
    }
    bad
}

/// Sorted list layout: each server sorted, and every key on server i below every key on server i+1.
pub fn sorted_partitions(contents: &[Vec<i64>]) -> Vec<String> {
    let mut bad = Vec::new();
    for (i, s) in contents.iter().enumerate() {
        if s.windows(2).any(|w| w[0] >= w[1]) {
            bad.push(format!("server {i} is not sorted: {s:?}"));
        }
    }
    let nonempty: Vec<(usize, &Vec<i64>)> = contents.iter().enumerate().filter(|(_, s)| !s.is_empty()).collect();
    for w in nonempty.windows(2) {
        let ((i, a), (j, b)) = (w[0], w[1]);
        if a.last() >= b.first() {
            bad.push(format!("server {i} max {:?} not below server {j} min {:?}", a.last(), b.first()));
        }
    }
    bad
}

fn interval(o: &Operation) -> (u64, u64) {
    (o.invoked, o.responded.unwrap_or(u64::MAX))
}

/// Searches that returned false although their key was present throughout the search:
/// inserted by a completed successful insert and not touched by any delete before the search ended.
pub fn search_misses(history: &History) -> Vec<String> {
    let ops = history.operations();
    let mut bad = Vec::new();
    for s in ops.iter().filter(|o| o.op == "search" && o.result == Some(Val::Bool(false))) {
        let k = s.args[0];
        let (s_inv, s_resp) = interval(s);
        let present = ops.iter().filter(|o| o.op == "insert" && o.args[0] == k && o.result == Some(Val::Bool(true))).any(|ins| {
            let (_, i_resp) = interval(ins);
            i_resp < s_inv && !ops.iter().any(|d| d.op == "delete" && d.args[0] == k && d.invoked < s_resp && interval(d).1 > i_resp)
        });
        if present {
            bad.push(format!("search({k}) by {} missed a present key", s.pid));
        }
    }
    bad
}

/// Combining phases of CC-Synch (`ccsynch` begin/end notes) must not overlap within an island.
pub fn combiner_exclusive(log: &EventLog, cores_per_island: usize) -> Vec<String> {
    let mut active: BTreeMap<usize, CoreId> = BTreeMap::new();
    let mut bad = Vec::new();
    for e in log.notes("ccsynch") {
        let Some(core) = e.src else { continue };
        let island = core / cores_per_island;
        if e.detail.starts_with("begin") {
            if let Some(other) = active.insert(island, core) {
                bad.push(format!("step {}: island {island} combiners {other} and {core} overlap", e.step));
            }
        } else {
            active.remove(&island);
        }
    }
    bad
}

/// Number of `tag` notes in the log.
pub fn count_notes(log: &EventLog, tag: &str) -> usize {
    log.notes(tag).count()
}
