use std::collections::HashSet;

use crate::{History, Operation, Spec, VerifyError};

pub const DEFAULT_CAP: usize = 14;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckResult {
    pub ok: bool,
    /// Indices into `History::operations()` in linearization order. Pending operations
    /// that were dropped do not appear.
    pub witness: Option<Vec<usize>>,
    /// Shortest event prefix that is already not linearizable.
    pub failing_prefix: Option<History>,
}

fn validate<S: Spec>(spec: &S, ops: &[Operation], cap: usize) -> Result<(), VerifyError> {
    if ops.len() > cap {
        return Err(VerifyError::TooLarge { ops: ops.len(), cap });
    }
    for o in ops {
        match spec.ops().iter().find(|(n, _)| *n == o.op) {
            None => return Err(VerifyError::UnknownOp { spec: spec.name(), op: o.op.clone() }),
            Some((_, arity)) if *arity != o.args.len() => {
                return Err(VerifyError::Malformed(format!("{} takes {} argument(s), got {}", o.op, arity, o.args.len())))
            }
            _ => {}
        }
    }
    Ok(())
}

struct Search<'a, S: Spec> {
    spec: &'a S,
    ops: &'a [Operation],
    /// Bit j of `preds[i]` set iff op j responded before op i was invoked.
    preds: Vec<u32>,
    required: u32,
    dead: HashSet<(u32, S::State)>,
    order: Vec<usize>,
}

impl<S: Spec> Search<'_, S> {
    fn dfs(&mut self, mask: u32, state: &S::State) -> bool {
        if mask & self.required == self.required {
            return true;
        }
        if self.dead.contains(&(mask, state.clone())) {
            return false;
        }
        for i in 0..self.ops.len() {
            let bit = 1u32 << i;
            if mask & bit != 0 || self.preds[i] & !mask != 0 {
                continue;
            }
            let op = &self.ops[i];
            for (val, next) in self.spec.outcomes(state, &op.op, &op.args) {
                if op.result.as_ref().is_some_and(|r| *r != val) {
                    continue;
                }
                self.order.push(i);
                if self.dfs(mask | bit, &next) {
                    return true;
                }
                self.order.pop();
            }
        }
        self.dead.insert((mask, state.clone()));
        false
    }
}

/// Searches for a linearization, returning the witness order when one exists.
/// Pending operations may either take effect (with any result) or be dropped.
pub fn find_linearization<S: Spec>(spec: &S, ops: &[Operation]) -> Option<Vec<usize>> {
    assert!(ops.len() <= 32, "operation masks are 32 bits wide");
    let preds = ops
        .iter()
        .map(|o| ops.iter().enumerate().filter(|(_, p)| p.precedes(o)).fold(0u32, |m, (j, _)| m | (1 << j)))
        .collect();
    let required = ops.iter().enumerate().filter(|(_, o)| !o.pending()).fold(0u32, |m, (j, _)| m | (1 << j));
    let mut s = Search { spec, ops, preds, required, dead: HashSet::new(), order: Vec::new() };
    let init = spec.init();
    if s.dfs(0, &init) {
        Some(s.order)
    } else {
        None
    }
}

pub fn check_linearizable<S: Spec>(history: &History, spec: &S) -> Result<CheckResult, VerifyError> {
    check_with_cap(history, spec, DEFAULT_CAP)
}

pub fn check_with_cap<S: Spec>(history: &History, spec: &S, cap: usize) -> Result<CheckResult, VerifyError> {
    if cap > 32 {
        return Err(VerifyError::Malformed(format!("cap {cap} exceeds the 32-operation search limit")));
    }
    let ops = history.operations();
    validate(spec, &ops, cap)?;
    if let Some(w) = find_linearization(spec, &ops) {
        return Ok(CheckResult { ok: true, witness: Some(w), failing_prefix: None });
    }
    // linearizability is prefix-closed, so the first failing prefix is the minimal one
    let n = (1..=history.len())
        .find(|&k| find_linearization(spec, &history.prefix(k).operations()).is_none())
        .expect("the full history fails");
    Ok(CheckResult { ok: false, witness: None, failing_prefix: Some(history.prefix(n)) })
}

/// Replays `order` sequentially and confirms every completed operation gets its recorded result
/// and real-time order is respected. Used to validate witnesses independently of the search.
pub fn replay<S: Spec>(spec: &S, ops: &[Operation], order: &[usize]) -> bool {
    let mut seen = vec![false; ops.len()];
    let mut states = vec![spec.init()];
    for &i in order {
        if i >= ops.len() || seen[i] || ops.iter().enumerate().any(|(j, p)| !seen[j] && p.precedes(&ops[i])) {
            return false;
        }
        seen[i] = true;
        let o = &ops[i];
        let next: Vec<S::State> = states
            .iter()
            .flat_map(|s| spec.outcomes(s, &o.op, &o.args))
            .filter(|(v, _)| o.result.as_ref().is_none_or(|r| r == v))
            .map(|(_, s)| s)
            .collect();
        if next.is_empty() {
            return false;
        }
        states = next;
    }
    ops.iter().enumerate().all(|(i, o)| seen[i] || o.pending())
}
