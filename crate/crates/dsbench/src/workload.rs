//! Client scripts: randomized mixes for correctness runs and operation pairs for benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::scenario::{Algo, Call, Family};
use dstructs::central::CentralKind;
use dstructs::dir_structs::SyncKind;
use dstructs::token::RingKind;

/// Number of distinct keys used by set workloads; small so operations collide.
pub const SET_KEYS: i64 = 4;

fn one(algo: Algo, rng: &mut impl Rng, next: &mut i64) -> Call {
    let mut fresh = || {
        *next += 1;
        *next
    };
    let coin = rng.gen_bool(0.5);
    match algo.family() {
        Family::Central(CentralKind::Stack) | Family::Dir(SyncKind::Stack) | Family::TStack => {
            if coin {
                Call::Push(fresh())
            } else {
                Call::Pop
            }
        }
        Family::Central(CentralKind::Queue) | Family::Dir(SyncKind::Queue | SyncKind::SyncQueue) | Family::Ring(RingKind::Queue) => {
            match (coin, algo) {
                (true, Algo::Delayqueue) => Call::DelayEnq(fresh(), rng.gen_range(0..20)),
                (true, _) => Call::Enq(fresh()),
                (false, _) => Call::Deq,
            }
        }
        Family::Central(CentralKind::Deque) | Family::Dir(SyncKind::Deque) | Family::Ring(RingKind::Deque) => match rng.gen_range(0..4) {
            0 => Call::EnqH(fresh()),
            1 => Call::EnqT(fresh()),
            2 => Call::DeqH,
            _ => Call::DeqT,
        },
        Family::UList | Family::SList => {
            let k = rng.gen_range(0..SET_KEYS);
            match rng.gen_range(0..10) {
                0..=3 => Call::Insert(k),
                4..=6 => Call::Delete(k),
                _ => Call::Search(k),
            }
        }
        Family::Manager => match algo {
            Algo::Gas => {
                if coin {
                    Call::Gas(0, rng.gen_range(1..4))
                } else {
                    Call::Read(0)
                }
            }
            Algo::Rwmon => {
                if coin {
                    Call::WriteSection(0, rng.gen_range(1..4))
                } else {
                    Call::ReadSection(0)
                }
            }
            _ => {
                let a = rng.gen_range(0..2);
                match rng.gen_range(0..5) {
                    0 => Call::Read(a),
                    1 => Call::Write(a, rng.gen_range(0..3)),
                    2 => Call::Faa(a, rng.gen_range(1..3)),
                    3 => Call::Swap(a, rng.gen_range(0..3)),
                    _ => Call::Cas(a, rng.gen_range(0..3), rng.gen_range(0..3)),
                }
            }
        },
    }
}

/// Splits `total` operations over `clients` scripts as evenly as possible.
fn spread(clients: usize, total: usize) -> Vec<usize> {
    (0..clients).map(|i| total / clients + usize::from(i < total % clients)).collect()
}

/// Random mix of `total` operations for `algo`. Synchronous queues get producers and
/// consumers with equal totals so every blocking call can be matched.
pub fn random_scripts(algo: Algo, clients: usize, total: usize, rng: &mut impl Rng) -> Vec<Vec<Call>> {
    let mut next = 0;
    if algo == Algo::Syncqueue {
        let half = total / 2;
        let producers = clients.div_ceil(2);
        let mut out: Vec<Vec<Call>> = spread(producers, half)
            .into_iter()
            .map(|n| {
                (0..n)
                    .map(|_| {
                        next += 1;
                        Call::Enq(next)
                    })
                    .collect()
            })
            .collect();
        out.extend(spread(clients - producers, half).into_iter().map(|n| vec![Call::Deq; n]));
        out.shuffle(rng);
        return out;
    }
    spread(clients, total).into_iter().map(|n| (0..n).map(|_| one(algo, rng, &mut next)).collect()).collect()
}

/// Benchmark workload: `total` operations arranged as insert/remove pairs per client.
pub fn pair_scripts(algo: Algo, clients: usize, total: usize) -> Vec<Vec<Call>> {
    let mut next = 0;
    let pairs = spread(clients, total / 2);
    if algo == Algo::Syncqueue {
        // half the clients produce, half consume
        let producers = clients.div_ceil(2);
        let enqs = spread(producers, total / 2);
        let deqs = spread(clients - producers, total / 2);
        let mut out: Vec<Vec<Call>> = enqs
            .into_iter()
            .map(|n| {
                (0..n)
                    .map(|_| {
                        next += 1;
                        Call::Enq(next)
                    })
                    .collect()
            })
            .collect();
        out.extend(deqs.into_iter().map(|n| vec![Call::Deq; n]));
        return out;
    }
    pairs
        .into_iter()
        .map(|n| {
            let mut s = Vec::with_capacity(2 * n);
            for _ in 0..n {
                next += 1;
                let v = next;
                let (a, b) = match algo.family() {
                    Family::Central(CentralKind::Stack) | Family::Dir(SyncKind::Stack) | Family::TStack => (Call::Push(v), Call::Pop),
                    Family::Central(CentralKind::Deque) | Family::Dir(SyncKind::Deque) | Family::Ring(RingKind::Deque) => (Call::EnqT(v), Call::DeqH),
                    Family::UList | Family::SList => (Call::Insert(v), Call::Delete(v)),
                    Family::Manager => match algo {
                        Algo::Rwmon => (Call::WriteSection(0, v), Call::ReadSection(0)),
                        Algo::Gas => (Call::Gas(0, v), Call::Read(0)),
                        _ => (Call::Faa(0, 1), Call::Read(0)),
                    },
                    _ if algo == Algo::Delayqueue => (Call::DelayEnq(v, 8), Call::Deq),
                    _ => (Call::Enq(v), Call::Deq),
                };
                s.push(a);
                s.push(b);
            }
            s
        })
        .collect()
}
