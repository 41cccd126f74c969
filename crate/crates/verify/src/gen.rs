//! Random concurrent histories for checker validation.
//!
//! Processes interleave invoke, take-effect and respond steps against a real copy of
//! the sequential specification, so uncorrupted histories are linearizable by
//! construction. A per-response corruption probability injects wrong results.

use rand::Rng;

use crate::{History, Spec, Val};

fn random_op<S: Spec, R: Rng>(spec: &S, rng: &mut R) -> (&'static str, Vec<i64>) {
    let ops = spec.ops();
    let (name, arity) = ops[rng.gen_range(0..ops.len())];
    let args = match spec.name() {
        // small address space and values so operations actually collide
        "register" => (0..arity).map(|i| if i == 0 { rng.gen_range(0..2) } else { rng.gen_range(0..3) }).collect(),
        _ => (0..arity).map(|_| rng.gen_range(1..4)).collect(),
    };
    (name, args)
}

fn corrupt<R: Rng>(v: &Val, rng: &mut R) -> Val {
    match v {
        Val::Bool(b) => Val::Bool(!b),
        Val::Unit => Val::Full,
        Val::Full => Val::Unit,
        Val::Nil | Val::Int(_) => {
            if rng.gen_bool(0.3) {
                Val::Nil
            } else {
                Val::Int(rng.gen_range(0..4))
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GenParams {
    pub procs: usize,
    pub ops: usize,
    /// Probability that a response value is replaced by a random one.
    pub corrupt: f64,
    /// Probability that an operation invoked last is left pending.
    pub pending: f64,
}

enum Phase {
    Idle,
    Invoked(&'static str, Vec<i64>),
    Done(Val),
}

pub fn random_history<S: Spec, R: Rng>(spec: &S, p: GenParams, rng: &mut R) -> History {
    let mut h = History::new();
    let mut state = spec.init();
    let mut phase: Vec<Phase> = (0..p.procs).map(|_| Phase::Idle).collect();
    let mut started = 0;
    loop {
        let live: Vec<usize> = (0..p.procs).filter(|&i| started < p.ops || !matches!(phase[i], Phase::Idle)).collect();
        if live.is_empty() {
            break;
        }
        let pid = live[rng.gen_range(0..live.len())];
        match std::mem::replace(&mut phase[pid], Phase::Idle) {
            Phase::Idle => {
                let (op, args) = random_op(spec, rng);
                h.invoke(pid, op, &args).expect("idle process may invoke");
                started += 1;
                phase[pid] = Phase::Invoked(op, args);
            }
            Phase::Invoked(op, args) => {
                let outs = spec.outcomes(&state, op, &args);
                let (v, s) = outs[rng.gen_range(0..outs.len())].clone();
                state = s;
                phase[pid] = Phase::Done(v);
            }
            Phase::Done(v) => {
                let v = if rng.gen_bool(p.corrupt) { corrupt(&v, rng) } else { v };
                h.respond(pid, v).expect("invoked process may respond");
            }
        }
        if started == p.ops && phase.iter().all(|ph| !matches!(ph, Phase::Idle)) && rng.gen_bool(p.pending) {
            // stop with every process mid-operation
            break;
        }
    }
    h
}
