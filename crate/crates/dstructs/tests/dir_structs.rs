mod common;

use common::*;
use dstructs::dir_structs::{DirStruct, SyncKind};
use dstructs::directory::Directory;
use dstructs::Op;
use simcore::Sim;

/// Synchronizer on core 3, directory servers on 4 and 5; clients use cores 0..=2.
fn structure(sim: &mut Sim<dstructs::Msg>, kind: SyncKind) -> DirStruct {
    let d = DirStruct { sync: 3, dir: Directory::new(vec![4, 5]) };
    d.dir.spawn(sim).unwrap();
    d.spawn_sync(sim, kind).unwrap();
    d
}

#[test]
fn stack_grants_keys_from_zero() {
    let mut sim = machine(1, 6, 1);
    let d = structure(&mut sim, SyncKind::Stack);
    let out = client(&mut sim, 0, None, move |cl| async move {
        d.push(&cl, 10).await?;
        d.push(&cl, 20).await?;
        Ok(vec![d.pop(&cl).await?, d.pop(&cl).await?, d.pop(&cl).await?])
    });
    let rep = sim.run();
    assert_clean(&rep);
    assert_eq!(take(&out), [Some(20), Some(10), None]);
    let grants: Vec<&str> = rep.log.notes("grant").map(|e| e.detail.as_str()).collect();
    assert_eq!(grants, ["push key=0", "push key=1", "pop key=1", "pop key=0", "pop key=-1"]);
}

#[test]
fn stack_message_counts() {
    for p in [1usize, 3, 7] {
        let mut sim = machine(1, 6, p as u64);
        let d = structure(&mut sim, SyncKind::Stack);
        client(&mut sim, 0, None, move |cl| async move {
            for i in 0..p {
                d.push(&cl, i as i64).await?;
            }
            for _ in 0..p {
                assert!(d.pop(&cl).await?.is_some());
            }
            Ok(Vec::<()>::new())
        });
        let rep = sim.run();
        assert_clean(&rep);
        assert_eq!(rep.stats.delivered.iter().sum::<u64>(), 8 * p as u64);
    }
    let mut sim = machine(1, 6, 0);
    let d = structure(&mut sim, SyncKind::Stack);
    client(&mut sim, 0, None, move |cl| async move { Ok(vec![d.pop(&cl).await?]) });
    let rep = sim.run();
    assert_clean(&rep);
    assert_eq!(rep.stats.delivered.iter().sum::<u64>(), 2);
}

#[test]
fn concurrent_pop_waits_for_the_racing_push() {
    // the pop may be granted the key of a push whose directory insert is still in flight
    for seed in 0..40 {
        let mut sim = machine(1, 6, seed);
        let d = structure(&mut sim, SyncKind::Stack);
        let d2 = d.clone();
        client(&mut sim, 0, None, move |cl| async move {
            d.push(&cl, 5).await?;
            Ok(Vec::<()>::new())
        });
        let got = client(&mut sim, 1, None, move |cl| async move {
            loop {
                if let Some(v) = d2.pop(&cl).await? {
                    return Ok(vec![v]);
                }
            }
        });
        assert_clean(&sim.run());
        assert_eq!(take(&got), [5], "seed {seed}");
    }
}

#[test]
fn queue_is_fifo() {
    let mut sim = machine(1, 6, 2);
    let d = structure(&mut sim, SyncKind::Queue);
    let out = client(&mut sim, 0, None, move |cl| async move {
        let first = d.dequeue(&cl).await?;
        d.enqueue(&cl, 1).await?;
        d.enqueue(&cl, 2).await?;
        Ok(vec![first, d.dequeue(&cl).await?, d.dequeue(&cl).await?, d.dequeue(&cl).await?])
    });
    assert_clean(&sim.run());
    assert_eq!(take(&out), [None, Some(1), Some(2), None]);
}

#[test]
fn deque_ends() {
    let mut sim = machine(1, 6, 3);
    let d = structure(&mut sim, SyncKind::Deque);
    let out = client(&mut sim, 0, None, move |cl| async move {
        let mut v = vec![d.deque_op(&cl, Op::DeqT, 0).await?];
        d.deque_op(&cl, Op::EnqT, 1).await?;
        v.push(d.deque_op(&cl, Op::DeqH, 0).await?);
        d.deque_op(&cl, Op::EnqH, 2).await?;
        d.deque_op(&cl, Op::EnqT, 3).await?;
        v.push(d.deque_op(&cl, Op::DeqT, 0).await?);
        v.push(d.deque_op(&cl, Op::DeqH, 0).await?);
        v.push(d.deque_op(&cl, Op::DeqH, 0).await?);
        Ok(v)
    });
    assert_clean(&sim.run());
    assert_eq!(take(&out), [None, Some(1), Some(3), Some(2), None]);
}

#[test]
fn sync_queue_pairs_in_either_order() {
    for consumer_first in [true, false] {
        let mut sim = machine(1, 6, 4);
        let d = structure(&mut sim, SyncKind::SyncQueue);
        let d2 = d.clone();
        let (wp, wc) = if consumer_first { (30, 0) } else { (0, 30) };
        let prod = client(&mut sim, 0, None, move |cl| async move {
            cl.ctx.work(wp).await;
            d.sync_enqueue(&cl, 42).await?;
            Ok(vec![cl.ctx.now()])
        });
        let cons = client(&mut sim, 1, None, move |cl| async move {
            cl.ctx.work(wc).await;
            Ok(vec![d2.sync_dequeue(&cl).await?])
        });
        assert_clean(&sim.run());
        assert_eq!(take(&cons), [42]);
        assert_eq!(take(&prod).len(), 1);
    }
}

#[test]
fn sync_queue_matches_bijectively() {
    for seed in 0..30 {
        let mut sim = machine(1, 8, seed);
        let d = DirStruct { sync: 5, dir: Directory::new(vec![6, 7]) };
        d.dir.spawn(&mut sim).unwrap();
        d.spawn_sync(&mut sim, SyncKind::SyncQueue).unwrap();
        for (core, v) in [(0, 1), (1, 2)] {
            let d = d.clone();
            client(&mut sim, core, None, move |cl| async move {
                d.sync_enqueue(&cl, v).await?;
                Ok(Vec::<()>::new())
            });
        }
        let mut outs = Vec::new();
        for core in [2, 3] {
            let d = d.clone();
            outs.push(client(&mut sim, core, None, move |cl| async move { Ok(vec![d.sync_dequeue(&cl).await?]) }));
        }
        assert_clean(&sim.run());
        let mut got: Vec<i64> = outs.iter().flat_map(take).collect();
        got.sort_unstable();
        assert_eq!(got, [1, 2], "seed {seed}");
    }
}

#[test]
fn unmatched_sync_dequeue_is_reported_blocked() {
    let mut sim = machine(1, 6, 5);
    let d = structure(&mut sim, SyncKind::SyncQueue);
    client(&mut sim, 0, None, move |cl| async move { Ok(vec![d.sync_dequeue(&cl).await?]) });
    let rep = sim.run();
    assert!(!rep.truncated);
    assert_eq!(rep.blocked.len(), 1);
}

#[test]
fn delay_zero_is_a_plain_queue() {
    let mut sim = machine(1, 6, 6);
    let d = structure(&mut sim, SyncKind::Queue);
    let out = client(&mut sim, 0, None, move |cl| async move {
        d.delay_enqueue(&cl, 1, 0).await?;
        d.delay_enqueue(&cl, 2, 0).await?;
        Ok(vec![d.dequeue(&cl).await?, d.dequeue(&cl).await?, d.dequeue(&cl).await?])
    });
    assert_clean(&sim.run());
    assert_eq!(take(&out), [Some(1), Some(2), None]);
}

#[test]
fn delayed_element_is_held_back() {
    for delay in [5u64, 50, 200] {
        let mut sim = machine(1, 6, delay);
        let d = structure(&mut sim, SyncKind::Queue);
        let out = client(&mut sim, 0, None, move |cl| async move {
            let t0 = cl.ctx.now();
            d.delay_enqueue(&cl, 9, delay).await?;
            let v = d.dequeue(&cl).await?;
            Ok(vec![(v, t0, cl.ctx.now())])
        });
        assert_clean(&sim.run());
        let (v, t0, t1) = take(&out)[0];
        assert_eq!(v, Some(9));
        assert!(t1 >= t0 + delay, "delay {delay}: enqueued at {t0}, dequeued by {t1}");
    }
}
