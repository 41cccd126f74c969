mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use dstructs::lists::{SList, UList, NACK_DUP, NACK_FULL};
use proptest::prelude::*;

fn envelopes(rep: &simcore::RunReport) -> u64 {
    rep.stats.delivered.iter().sum()
}

#[test]
fn ulist_insert_and_duplicate() {
    for alt in [false, true] {
        let mut sim = machine(1, 4, 1);
        let mut ul = UList::new(vec![2, 3], 4);
        if alt {
            ul = ul.two_phase();
        }
        let probe = ul.spawn(&mut sim).unwrap();
        let out = client(&mut sim, 0, None, move |cl| async move {
            let a = ul.insert_reply(&cl, 5, 50).await?;
            let b = ul.insert_reply(&cl, 5, 51).await?;
            Ok(vec![(a.ok, 0), (b.ok, b.aux)])
        });
        assert_clean(&sim.run());
        assert_eq!(take(&out), [(true, 0), (false, NACK_DUP)], "alt={alt}");
        assert_eq!(probe.borrow()[0].get(&5), Some(&(50, 0)));
        assert!(probe.borrow()[1].is_empty());
    }
}

#[test]
fn ulist_chunks_follow_the_token() {
    let mut sim = machine(1, 4, 2);
    let ul = UList::new(vec![2, 3], 1);
    let probe = ul.spawn(&mut sim).unwrap();
    let out = client(&mut sim, 0, None, move |cl| async move {
        let mut v = Vec::new();
        for k in 1..=3 {
            v.push(ul.insert(&cl, k, k * 10).await?);
        }
        Ok(v)
    });
    assert_clean(&sim.run());
    assert_eq!(take(&out), [true, true, true]);
    let p = probe.borrow();
    assert_eq!(p[0], BTreeMap::from([(1, (10, 0)), (3, (30, 1))]));
    assert_eq!(p[1], BTreeMap::from([(2, (20, 0))]));
}

#[test]
fn fixed_ulist_runs_out() {
    for alt in [false, true] {
        let mut sim = machine(1, 4, 3);
        let mut ul = UList::new(vec![2, 3], 1).fixed();
        if alt {
            ul = ul.two_phase();
        }
        ul.spawn(&mut sim).unwrap();
        let out = client(&mut sim, 0, None, move |cl| async move {
            let mut v = Vec::new();
            for k in 1..=3 {
                let r = ul.insert_reply(&cl, k, k).await?;
                v.push((r.ok, if r.ok { 0 } else { r.aux }));
            }
            Ok(v)
        });
        assert_clean(&sim.run());
        assert_eq!(take(&out), [(true, 0), (true, 0), (false, NACK_FULL)], "alt={alt}");
    }
}

#[test]
fn search_and_delete_broadcast() {
    let mut sim = machine(1, 5, 4);
    let ul = UList::new(vec![2, 3, 4], 2);
    ul.spawn(&mut sim).unwrap();
    let out = client(&mut sim, 0, None, move |cl| async move { Ok(vec![ul.search(&cl, 9).await?]) });
    let rep = sim.run();
    assert_clean(&rep);
    assert_eq!(take(&out), [false]);
    // one request and one reply per server
    assert_eq!(envelopes(&rep), 6);
}

#[test]
fn two_phase_duplicate_stops_after_the_probe() {
    let mut sim = rr_machine(1, 5);
    let ul = UList::new(vec![2, 3, 4], 2).two_phase();
    ul.spawn(&mut sim).unwrap();
    let u = ul.clone();
    client(&mut sim, 0, None, move |cl| async move {
        u.insert(&cl, 1, 1).await?;
        Ok(Vec::<()>::new())
    });
    let once = envelopes(&sim.run());

    let mut sim = rr_machine(1, 5);
    ul.spawn(&mut sim).unwrap();
    let out = client(&mut sim, 0, None, move |cl| async move {
        let a = ul.insert(&cl, 1, 1).await?;
        let b = ul.insert(&cl, 1, 2).await?;
        Ok(vec![a, b])
    });
    let rep = sim.run();
    assert_clean(&rep);
    assert_eq!(take(&out), [true, false]);
    assert_eq!(envelopes(&rep), once + 6);
}

#[test]
fn concurrent_deletes_of_one_element() {
    for alt in [false, true] {
        for seed in 0..30 {
            let mut sim = machine(1, 6, seed);
            let mut ul = UList::new(vec![3, 4, 5], 2);
            if alt {
                ul = ul.two_phase();
            }
            ul.spawn(&mut sim).unwrap();
            let u = ul.clone();
            client(&mut sim, 0, None, move |cl| async move {
                assert!(u.insert(&cl, 7, 7).await?);
                Ok(Vec::<()>::new())
            });
            let outs: Vec<_> = [1, 2]
                .into_iter()
                .map(|core| {
                    let u = ul.clone();
                    client(&mut sim, core, None, move |cl| async move {
                        cl.ctx.work(30).await;
                        Ok(vec![u.delete(&cl, 7).await?])
                    })
                })
                .collect();
            assert_clean(&sim.run());
            let wins = outs.iter().flat_map(take).filter(|x| *x).count();
            assert_eq!(wins, 1, "alt={alt} seed {seed}");
        }
    }
}

#[test]
fn concurrent_distinct_inserts_land_once() {
    for alt in [false, true] {
        for seed in 0..40 {
            let mut sim = machine(1, 6, seed);
            let mut ul = UList::new(vec![3, 4, 5], 1);
            if alt {
                ul = ul.two_phase();
            }
            let probe = ul.spawn(&mut sim).unwrap();
            let outs: Vec<_> = (0..3)
                .map(|c| {
                    let u = ul.clone();
                    client(&mut sim, c, None, move |cl| async move {
                        let mut v = Vec::new();
                        for i in 0..3 {
                            v.push(u.insert(&cl, (c * 10 + i) as i64, 0).await?);
                        }
                        Ok(v)
                    })
                })
                .collect();
            let rep = sim.run();
            assert_clean(&rep);
            assert!(outs.iter().flat_map(take).all(|x| x), "alt={alt} seed {seed}");
            let stored: usize = probe.borrow().iter().map(BTreeMap::len).sum();
            assert_eq!(stored, 9);
            let mut holder = None;
            for e in rep.log.notes("token") {
                if e.detail.starts_with("acquire") {
                    assert_eq!(holder.replace(e.src), None, "two list tokens at step {}", e.step);
                } else {
                    assert_eq!(holder.take(), Some(e.src), "release by a non-holder at step {}", e.step);
                }
            }
        }
    }
}

#[test]
fn slist_keeps_server_zero_sorted() {
    let mut sim = machine(1, 4, 5);
    let sl = SList::new(vec![2, 3], 8);
    let probe = sl.spawn(&mut sim).unwrap();
    client(&mut sim, 0, None, move |cl| async move {
        for k in [3, 1, 2] {
            assert!(sl.insert(&cl, k, k).await?);
        }
        Ok(Vec::<()>::new())
    });
    assert_clean(&sim.run());
    assert_eq!(probe.borrow()[0].keys().copied().collect::<Vec<_>>(), [1, 2, 3]);
    assert!(probe.borrow()[1].is_empty());
}

#[test]
fn slist_moves_the_top_chunk() {
    let mut sim = machine(1, 4, 6);
    let sl = SList::new(vec![2, 3], 2);
    assert_eq!(sl.chunk_size(), 1);
    let probe = sl.spawn(&mut sim).unwrap();
    client(&mut sim, 0, None, move |cl| async move {
        for k in [1, 2, 3] {
            assert!(sl.insert(&cl, k, k).await?);
        }
        Ok(Vec::<()>::new())
    });
    let rep = sim.run();
    assert_clean(&rep);
    let p = probe.borrow();
    assert_eq!(p[0].keys().copied().collect::<Vec<_>>(), [1]);
    assert_eq!(p[1].keys().copied().collect::<Vec<_>>(), [2, 3]);
    assert_eq!(rep.log.notes("move").count(), 1);
}

#[test]
fn slist_full_everywhere() {
    let mut sim = machine(1, 4, 7);
    let sl = SList::new(vec![2, 3], 2);
    let probe = sl.spawn(&mut sim).unwrap();
    let out = client(&mut sim, 0, None, move |cl| async move {
        let mut v = Vec::new();
        // 4 is refused by the full last server; -1 needs a move the last server cannot take
        for k in [1, 2, 3, 4, 0, -1] {
            let r = sl.insert_reply(&cl, k, k).await?;
            v.push((r.ok, if r.ok { 0 } else { r.aux }));
        }
        Ok(v)
    });
    assert_clean(&sim.run());
    let full = (false, NACK_FULL);
    assert_eq!(take(&out), [(true, 0), (true, 0), (true, 0), full, (true, 0), full]);
    let p = probe.borrow();
    assert_eq!(p[0].keys().copied().collect::<Vec<_>>(), [0, 1]);
    assert_eq!(p[1].keys().copied().collect::<Vec<_>>(), [2, 3]);
}

#[test]
fn client_vectors_only_grow() {
    for seed in 0..20 {
        let mut sim = machine(1, 7, seed);
        let sl = SList::new(vec![4, 5, 6], 2);
        sl.spawn(&mut sim).unwrap();
        for c in 0..4 {
            let s = sl.clone();
            client(&mut sim, c, None, move |cl| async move {
                for i in 0..4 {
                    let k = ((c * 3 + i * 5) % 9) as i64;
                    match i % 3 {
                        0 => drop(s.insert(&cl, k, k).await?),
                        1 => drop(s.search(&cl, k).await?),
                        _ => drop(s.delete(&cl, k).await?),
                    }
                }
                Ok(Vec::<()>::new())
            });
        }
        let rep = sim.run();
        assert_clean(&rep);
        let mut last: BTreeMap<(usize, String), u64> = BTreeMap::new();
        for e in rep.log.notes("cv") {
            let cid = e.detail.split_whitespace().next().unwrap().to_string();
            let v: u64 = e.detail.split("v=").nth(1).unwrap().parse().unwrap();
            let prev = last.insert((e.src.unwrap(), cid), v).unwrap_or(0);
            assert_eq!(v, prev + 1, "seed {seed}: {}", e.detail);
        }
    }
}

#[derive(Clone, Debug)]
enum LOp {
    Ins(i64),
    Has(i64),
    Del(i64),
}

fn lop() -> impl Strategy<Value = LOp> {
    prop_oneof![3 => (0i64..12).prop_map(LOp::Ins), 1 => (0i64..12).prop_map(LOp::Has), 1 => (0i64..12).prop_map(LOp::Del)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slist_matches_a_sorted_set(ops in prop::collection::vec(lop(), 1..40), seed in any::<u64>(), cap in 2usize..5) {
        let mut sim = machine(1, 4, seed);
        let sl = SList::new(vec![1, 2, 3], cap);
        let probe = sl.spawn(&mut sim).unwrap();
        let script = ops.clone();
        let out = client(&mut sim, 0, None, move |cl| async move {
            let mut v = Vec::new();
            for op in script {
                v.push(match op {
                    LOp::Ins(k) => {
                        let r = sl.insert_reply(&cl, k, k).await?;
                        (r.ok, if r.ok { 0 } else { r.aux })
                    }
                    LOp::Has(k) => (sl.search(&cl, k).await?, 0),
                    LOp::Del(k) => (sl.delete(&cl, k).await?, 0),
                });
            }
            Ok(v)
        });
        assert_clean(&sim.run());
        let mut set = BTreeSet::new();
        for (op, got) in ops.iter().zip(take(&out)) {
            match *op {
                LOp::Ins(k) if set.contains(&k) => prop_assert_eq!(got, (false, NACK_DUP)),
                // a full list may refuse a fresh key; the set stays as it was
                LOp::Ins(k) => {
                    prop_assert!(got == (true, 0) || got == (false, NACK_FULL));
                    if got.0 {
                        set.insert(k);
                    }
                }
                LOp::Has(k) => prop_assert_eq!(got.0, set.contains(&k)),
                LOp::Del(k) => prop_assert_eq!(got.0, set.remove(&k)),
            }
        }
        let p = probe.borrow();
        let all: Vec<i64> = p.iter().flat_map(|m| m.keys().copied()).collect();
        prop_assert_eq!(all, set.into_iter().collect::<Vec<_>>());
        for m in p.iter() {
            prop_assert!(m.len() <= cap);
        }
    }

    #[test]
    fn ulist_matches_a_set(ops in prop::collection::vec(lop(), 1..40), seed in any::<u64>(), alt in any::<bool>()) {
        let mut sim = machine(1, 4, seed);
        let mut ul = UList::new(vec![1, 2, 3], 2);
        if alt {
            ul = ul.two_phase();
        }
        let probe = ul.spawn(&mut sim).unwrap();
        let script = ops.clone();
        let out = client(&mut sim, 0, None, move |cl| async move {
            let mut v = Vec::new();
            for op in script {
                v.push(match op {
                    LOp::Ins(k) => ul.insert(&cl, k, k).await?,
                    LOp::Has(k) => ul.search(&cl, k).await?,
                    LOp::Del(k) => ul.delete(&cl, k).await?,
                });
            }
            Ok(v)
        });
        assert_clean(&sim.run());
        let mut set = BTreeSet::new();
        let want: Vec<bool> = ops
            .iter()
            .map(|op| match *op {
                LOp::Ins(k) => set.insert(k),
                LOp::Has(k) => set.contains(&k),
                LOp::Del(k) => set.remove(&k),
            })
            .collect();
        prop_assert_eq!(take(&out), want);
        let stored: BTreeSet<i64> = probe.borrow().iter().flat_map(|m| m.keys().copied()).collect();
        prop_assert_eq!(stored, set);
    }
}
