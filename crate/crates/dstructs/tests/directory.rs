mod common;

use std::collections::BTreeMap;

use common::*;
use dstructs::directory::{hash, Directory};
use proptest::prelude::*;

#[test]
fn hash_examples() {
    assert_eq!(hash(0, 4, 8), (0, 0));
    assert_eq!(hash(-1, 4, 8), (3, 7));
    assert_eq!(hash(33, 4, 8), (1, 0));
}

proptest! {
    #[test]
    fn hash_matches_formula(key in any::<i32>(), ns in 1usize..9, b in 1usize..17) {
        let key = key as i64;
        let m = (ns * b) as i64;
        let idx = (((key % m) + m) % m) as usize;
        prop_assert_eq!(hash(key, ns, b), (idx % ns, idx / ns));
        prop_assert_eq!(hash(key, ns, b), hash(key + m, ns, b));
        let (s, k) = hash(key, ns, b);
        prop_assert!(s < ns && k < b);
    }
}

#[test]
fn single_client_basics() {
    let mut sim = machine(1, 4, 1);
    let dir = Directory::new(vec![2, 3]);
    dir.spawn(&mut sim).unwrap();
    let d = dir.clone();
    let out = client(&mut sim, 0, None, move |cl| async move {
        Ok(vec![
            format!("{:?}", d.search(&cl, 5).await?),
            format!("{:?}", d.insert(&cl, 5, 10).await?),
            format!("{:?}", d.insert(&cl, 5, 11).await?),
            format!("{:?}", d.search(&cl, 5).await?),
            format!("{:?}", d.delete(&cl, 5).await?),
            format!("{:?}", d.search(&cl, 5).await?),
            format!("{:?}", d.delete(&cl, 5).await?),
        ])
    });
    assert_clean(&sim.run());
    assert_eq!(take(&out), ["None", "true", "false", "Some(10)", "Some(10)", "None", "None"]);
}

#[test]
fn keys_spread_evenly_over_servers() {
    let mut sim = machine(1, 6, 2);
    let dir = Directory { servers: vec![2, 3, 4, 5], buckets: 8 };
    let probe = dir.spawn(&mut sim).unwrap();
    let d = dir.clone();
    client(&mut sim, 0, None, move |cl| async move {
        for k in 0..32 {
            assert!(d.insert(&cl, k, k).await?);
        }
        Ok(Vec::<()>::new())
    });
    assert_clean(&sim.run());
    let p = probe.borrow();
    for (s, table) in p.iter().enumerate() {
        let n: usize = table.iter().map(Vec::len).sum();
        assert_eq!(n, 8, "server {s}");
        for (b, chain) in table.iter().enumerate() {
            for e in chain {
                assert_eq!(hash(e.key, 4, 8), (s, b));
            }
        }
    }
}

#[test]
fn blocking_delete_waits_for_insert() {
    let mut sim = machine(1, 4, 3);
    let dir = Directory::new(vec![3]);
    dir.spawn(&mut sim).unwrap();
    let d = dir.clone();
    let got = client(&mut sim, 0, None, move |cl| async move { Ok(vec![(d.block_delete(&cl, 3).await?, cl.ctx.now())]) });
    let d = dir.clone();
    let put = client(&mut sim, 1, None, move |cl| async move {
        cl.ctx.work(40).await;
        let at = cl.ctx.now();
        d.insert(&cl, 3, 77).await?;
        Ok(vec![at])
    });
    assert_clean(&sim.run());
    let (v, done) = take(&got)[0];
    assert_eq!(v, 77);
    assert!(done > take(&put)[0]);
}

#[test]
fn blocking_delete_of_present_key_returns_at_once() {
    let mut sim = machine(1, 4, 4);
    let dir = Directory::new(vec![3]);
    dir.spawn(&mut sim).unwrap();
    let d = dir.clone();
    let out = client(&mut sim, 0, None, move |cl| async move {
        d.insert(&cl, 3, 9).await?;
        Ok(vec![d.block_delete(&cl, 3).await?])
    });
    assert_clean(&sim.run());
    assert_eq!(take(&out), [9]);
}

#[test]
fn two_blocked_deleters_get_their_own_keys() {
    for seed in 0..20 {
        let mut sim = machine(1, 5, seed);
        let dir = Directory::new(vec![3, 4]);
        dir.spawn(&mut sim).unwrap();
        let d = dir.clone();
        let a = client(&mut sim, 0, None, move |cl| async move { Ok(vec![d.block_delete(&cl, 1).await?]) });
        let d = dir.clone();
        let b = client(&mut sim, 1, None, move |cl| async move { Ok(vec![d.block_delete(&cl, 2).await?]) });
        let d = dir.clone();
        client(&mut sim, 2, None, move |cl| async move {
            d.insert(&cl, 2, 20).await?;
            d.insert(&cl, 1, 10).await?;
            Ok(Vec::<()>::new())
        });
        assert_clean(&sim.run());
        assert_eq!((take(&a), take(&b)), (vec![10], vec![20]), "seed {seed}");
    }
}

#[derive(Clone, Debug)]
enum DOp {
    Ins(i64, i64),
    Get(i64),
    Del(i64),
}

fn dop() -> impl Strategy<Value = DOp> {
    prop_oneof![
        (-6i64..6, 0i64..100).prop_map(|(k, v)| DOp::Ins(k, v)),
        (-6i64..6).prop_map(DOp::Get),
        (-6i64..6).prop_map(DOp::Del),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sequential_ops_match_a_map(ops in prop::collection::vec(dop(), 1..30), seed in any::<u64>()) {
        let mut sim = machine(1, 4, seed);
        let dir = Directory { servers: vec![1, 2, 3], buckets: 4 };
        dir.spawn(&mut sim).unwrap();
        let d = dir.clone();
        let script = ops.clone();
        let out = client(&mut sim, 0, None, move |cl| async move {
            let mut v = Vec::new();
            for op in script {
                v.push(match op {
                    DOp::Ins(k, x) => Some(i64::from(d.insert(&cl, k, x).await?)),
                    DOp::Get(k) => d.search(&cl, k).await?,
                    DOp::Del(k) => d.delete(&cl, k).await?,
                });
            }
            Ok(v)
        });
        assert_clean(&sim.run());
        let mut m = BTreeMap::new();
        let want: Vec<Option<i64>> = ops
            .iter()
            .map(|op| match *op {
                DOp::Ins(k, x) => Some(i64::from(!m.contains_key(&k) && m.insert(k, x).is_none())),
                DOp::Get(k) => m.get(&k).copied(),
                DOp::Del(k) => m.remove(&k),
            })
            .collect();
        prop_assert_eq!(take(&out), want);
    }
}
