mod common;

use std::collections::BTreeSet;

use common::*;
use dstructs::central::{CcClient, Central, CentralKind};
use dstructs::dir_structs::{DirStruct, SyncKind};
use dstructs::directory::Directory;
use dstructs::net::{eliminate, run_master, ELIMINATED};
use dstructs::{MasterConfig, Op, Req};
use simcore::{EventKind, RunReport};

fn req(op: Op, cid: usize, data: i64) -> (u64, Req) {
    (cid as u64, Req::new(op, cid, 1).data(data))
}

#[test]
fn eliminate_examples() {
    let (pairs, rest) = eliminate(vec![req(Op::Push, 0, 7), req(Op::Pop, 1, 0)]);
    assert_eq!(pairs.len(), 1);
    assert_eq!((pairs[0].0.data, pairs[0].1.cid), (7, 1));
    assert!(rest.is_empty());

    let (pairs, rest) = eliminate(vec![req(Op::Push, 0, 1), req(Op::Push, 1, 2), req(Op::Pop, 2, 0)]);
    assert_eq!(pairs.len(), 1);
    assert_eq!(rest.len(), 1);
    assert_eq!(rest[0].1.op, Op::Push);

    let (pairs, rest) = eliminate((0..4).map(|c| req(Op::Push, c, c as i64)).collect());
    assert!(pairs.is_empty());
    assert_eq!(rest.len(), 4);

    // only the same end pairs up
    let (pairs, rest) = eliminate(vec![req(Op::EnqH, 0, 1), req(Op::DeqT, 1, 0), req(Op::DeqH, 2, 0)]);
    assert_eq!(pairs.len(), 1);
    assert_eq!((pairs[0].0.op, pairs[0].1.op), (Op::EnqH, Op::DeqH));
    assert_eq!(rest[0].1.op, Op::DeqT);
}

fn sends(rep: &RunReport, op: &str) -> usize {
    rep.log.events.iter().filter(|e| e.kind == EventKind::Send && e.op == op).count()
}

/// One island of clients plus a master on its last core, a central stack on island 1.
fn batched(clients: usize, cores: usize, cfg: MasterConfig, seed: u64) -> (RunReport, Vec<i64>) {
    let mut sim = machine(2, cores, seed);
    let master = cores - 1;
    let c = Central::new(cores, CentralKind::Stack);
    c.spawn(&mut sim).unwrap();
    sim.spawn(master, "master", true, move |ctx| run_master(ctx, cfg)).unwrap();
    let outs: Vec<_> = (0..clients)
        .map(|i| {
            let c = c.clone();
            client(&mut sim, i, Some(master), move |cl| async move {
                let r = cl.call(c.server, c.request(&cl, Op::Push, i as i64)).await?;
                Ok(vec![r.aux])
            })
        })
        .collect();
    let rep = sim.run();
    assert_clean(&rep);
    (rep, outs.iter().flat_map(take).collect())
}

fn slow_timer(cap: usize) -> MasterConfig {
    MasterConfig { timer: 1000, cap, ..MasterConfig::default() }
}

#[test]
fn master_sends_one_batch_per_server() {
    for seed in 0..10 {
        let (rep, _) = batched(7, 8, slow_timer(16), seed);
        assert_eq!(sends(&rep, "BATCH"), 1, "seed {seed}");
        assert_eq!(sends(&rep, "BATCH_REPLY"), 1);
        assert_eq!(sends(&rep, "UP"), 7);
    }
}

#[test]
fn full_buffer_flushes_early() {
    let (rep, _) = batched(5, 8, slow_timer(4), 1);
    assert_eq!(sends(&rep, "BATCH"), 2);
    let first = rep.log.events.iter().find(|e| e.kind == EventKind::Send && e.op == "BATCH").unwrap();
    assert!(first.step < 1000, "flushed at step {}", first.step);
}

#[test]
fn large_batch_goes_by_dma() {
    let (rep, _) = batched(12, 16, slow_timer(32), 2);
    assert_eq!(sends(&rep, "BATCH_DMA"), 1);
    assert_eq!(sends(&rep, "BATCH"), 0);
    assert_eq!(rep.log.events.iter().filter(|e| e.kind == EventKind::DmaStart).count(), 1);
    let no_dma = MasterConfig { dma: false, ..slow_timer(32) };
    let (rep, _) = batched(12, 16, no_dma, 2);
    assert_eq!(sends(&rep, "BATCH"), 1);
}

#[test]
fn master_elimination_answers_locally() {
    let mut sim = machine(2, 8, 3);
    let c = Central::new(8, CentralKind::Stack);
    let probe = c.spawn(&mut sim).unwrap();
    let cfg = MasterConfig { elim: true, ..slow_timer(16) };
    sim.spawn(7, "master", true, move |ctx| run_master(ctx, cfg)).unwrap();
    let outs: Vec<_> = (0..4)
        .map(|i| {
            let c = c.clone();
            let op = if i % 2 == 0 { Op::Push } else { Op::Pop };
            client(&mut sim, i, Some(7), move |cl| async move {
                let r = cl.call(c.server, c.request(&cl, op, 10 + i as i64)).await?;
                Ok(vec![(op, r.ok, r.data, r.aux)])
            })
        })
        .collect();
    let rep = sim.run();
    assert_clean(&rep);
    let got: Vec<_> = outs.iter().flat_map(take).collect();
    assert!(got.iter().all(|g| g.1 && g.3 == ELIMINATED));
    let popped: BTreeSet<i64> = got.iter().filter(|g| g.0 == Op::Pop).map(|g| g.2).collect();
    assert_eq!(popped, BTreeSet::from([10, 12]));
    assert_eq!(sends(&rep, "BATCH"), 0);
    assert!(probe.borrow().is_empty());
}

fn combined(kind: SyncKind, ops: &[Op]) -> (RunReport, Vec<Option<i64>>) {
    let mut sim = machine(2, 8, 4);
    let d = DirStruct { sync: 8, dir: Directory::new(vec![9, 10]) };
    d.dir.spawn(&mut sim).unwrap();
    d.spawn_sync(&mut sim, kind).unwrap();
    let cfg = MasterConfig { combine: BTreeSet::from([d.sync]), ..slow_timer(16) };
    sim.spawn(7, "master", true, move |ctx| run_master(ctx, cfg)).unwrap();
    let outs: Vec<_> = ops
        .iter()
        .enumerate()
        .map(|(i, &op)| {
            let d = d.clone();
            client(&mut sim, i, Some(7), move |cl| async move {
                let v = match op {
                    Op::Push => Some(i64::from(d.push(&cl, 100 + i as i64).await?)),
                    Op::Pop => d.pop(&cl).await?,
                    Op::Enq => {
                        d.enqueue(&cl, 100 + i as i64).await?;
                        Some(1)
                    }
                    _ => d.dequeue(&cl).await?,
                };
                Ok(vec![v])
            })
        })
        .collect();
    let rep = sim.run();
    assert_clean(&rep);
    (rep, outs.iter().flat_map(take).collect())
}

#[test]
fn combined_pushes_get_consecutive_keys() {
    let (rep, got) = combined(SyncKind::Stack, &[Op::Push, Op::Push, Op::Push]);
    assert!(got.iter().all(|g| *g == Some(1)));
    let grants: Vec<&str> = rep.log.notes("grant").map(|e| e.detail.as_str()).collect();
    assert_eq!(grants, ["combine pushes=[0, 1, 2] pops=[]"]);
}

#[test]
fn combined_queue_counter() {
    let (rep, got) = combined(SyncKind::Queue, &[Op::Enq, Op::Enq, Op::Deq]);
    let grants: Vec<&str> = rep.log.notes("grant").map(|e| e.detail.as_str()).collect();
    assert_eq!(grants, ["combine enq=2 deq=1 head=1 tail=2"]);
    // the dequeue takes whichever enqueue was given key 1
    assert!(matches!(got[2], Some(100 | 101)));
}

fn ccsynch(clients: usize, calls: usize, h: usize, seed: u64) -> RunReport {
    let mut sim = machine(2, 8, seed);
    let c = Central::new(8, CentralKind::Queue);
    let probe = c.spawn(&mut sim).unwrap();
    for i in 0..clients {
        let c = c.clone();
        sim.spawn(i, "client", false, move |ctx| async move {
            let cc = CcClient::new(ctx, h);
            for j in 0..calls {
                let r = cc.call(c.server, c.request(&cc.cl, Op::Enq, (i * 100 + j) as i64)).await?;
                assert!(r.ok);
            }
            Ok(())
        })
        .unwrap();
    }
    let rep = sim.run();
    assert_clean(&rep);
    assert_eq!(probe.borrow().len(), clients * calls);
    rep
}

fn batch_sizes(rep: &RunReport) -> Vec<usize> {
    rep.log.notes("ccsynch").filter_map(|e| e.detail.strip_prefix("begin n=")).map(|n| n.parse().unwrap()).collect()
}

#[test]
fn lone_ccsynch_client_combines_for_itself() {
    let rep = ccsynch(1, 3, 4, 5);
    assert_eq!(batch_sizes(&rep), [1, 1, 1]);
}

#[test]
fn ccsynch_batches_respect_h_and_one_combiner_at_a_time() {
    for seed in 0..20 {
        let rep = ccsynch(6, 4, 2, seed);
        let sizes = batch_sizes(&rep);
        assert!(sizes.iter().all(|&n| (1..=2).contains(&n)), "seed {seed}: {sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 24);
        let mut active = None;
        for e in rep.log.notes("ccsynch") {
            if e.detail.starts_with("begin") {
                assert_eq!(active.replace(e.src), None, "seed {seed} step {}", e.step);
            } else {
                assert_eq!(active.take(), Some(e.src));
            }
        }
    }
}
