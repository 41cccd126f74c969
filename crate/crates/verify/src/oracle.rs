//! Naive all-permutations reference used to validate the search-based checker.

use crate::{Operation, Spec};

fn respects_real_time(ops: &[Operation], order: &[usize]) -> bool {
    order.iter().enumerate().all(|(pos, &i)| order[pos + 1..].iter().all(|&j| !ops[j].precedes(&ops[i])))
}

fn replays<S: Spec>(spec: &S, ops: &[Operation], order: &[usize], at: usize, state: &S::State) -> bool {
    let Some(&i) = order.get(at) else { return true };
    let o = &ops[i];
    spec.outcomes(state, &o.op, &o.args)
        .into_iter()
        .any(|(v, s)| o.result.as_ref().is_none_or(|r| *r == v) && replays(spec, ops, order, at + 1, &s))
}

fn permutations(items: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
    if k == items.len() {
        return f(items);
    }
    for i in k..items.len() {
        items.swap(k, i);
        if permutations(items, k + 1, f) {
            return true;
        }
        items.swap(k, i);
    }
    false
}

/// True iff some subset of the pending operations together with every completed one
/// has an ordering that respects real time and replays on `spec`.
pub fn brute_force<S: Spec>(spec: &S, ops: &[Operation]) -> bool {
    let pending: Vec<usize> = (0..ops.len()).filter(|&i| ops[i].pending()).collect();
    for subset in 0u32..(1 << pending.len()) {
        let mut chosen: Vec<usize> = (0..ops.len()).filter(|&i| !ops[i].pending()).collect();
        chosen.extend(pending.iter().enumerate().filter(|(b, _)| subset & (1 << b) != 0).map(|(_, &i)| i));
        let init = spec.init();
        let found = permutations(&mut chosen, 0, &mut |order| {
            respects_real_time(ops, order) && replays(spec, ops, order, 0, &init)
        });
        if found {
            return true;
        }
    }
    false
}
