use proptest::prelude::*;
use simcore::*;

#[derive(Clone, Debug, PartialEq)]
enum M {
    Ping(u64),
    Tag(&'static str),
}

impl Message for M {
    fn op(&self) -> &'static str {
        match self {
            M::Ping(_) => "ping",
            M::Tag(t) => t,
        }
    }
}

fn cfg(islands: usize, per: usize, seed: u64) -> SimConfig {
    SimConfig::new(Topology::new(islands, per).unwrap(), seed)
}

/// `senders` cores each send `n` numbered pings to core 0, which records arrival order.
fn fan_in(seed: u64, senders: usize, n: u64, rr: bool) -> (RunReport, Vec<(usize, u64)>) {
    let mut c = cfg(1, senders + 1, seed);
    if rr {
        c = c.round_robin();
    }
    let mut sim = Sim::<M>::new(c).unwrap();
    let got = std::rc::Rc::new(std::cell::RefCell::new(Vec::new()));
    let g = got.clone();
    let total = senders as u64 * n;
    sim.spawn(0, "sink", false, move |ctx| async move {
        for _ in 0..total {
            let e = ctx.recv().await;
            if let M::Ping(k) = e.msg {
                g.borrow_mut().push((e.src, k));
            }
        }
        Ok(())
    })
    .unwrap();
    for s in 1..=senders {
        sim.spawn(s, "src", false, move |ctx| async move {
            for k in 0..n {
                ctx.send(0, M::Ping(k)).await?;
            }
            Ok(())
        })
        .unwrap();
    }
    let rep = sim.run();
    let v = got.borrow().clone();
    (rep, v)
}

#[test]
fn round_robin_delivers_in_one_step() {
    let mut sim = Sim::<M>::new(cfg(1, 2, 0).round_robin()).unwrap();
    sim.spawn(0, "a", false, |ctx| async move {
        ctx.send(1, M::Ping(7)).await?;
        Ok(())
    })
    .unwrap();
    sim.spawn(1, "b", false, |ctx| async move {
        let e = ctx.recv().await;
        assert_eq!(e.msg, M::Ping(7));
        assert_eq!(ctx.now(), 1);
        Ok(())
    })
    .unwrap();
    let rep = sim.run();
    assert!(rep.clean(), "{}", rep.diagnostic());
}

#[test]
fn one_action_per_step() {
    let mut sim = Sim::<M>::new(cfg(1, 2, 0).round_robin()).unwrap();
    sim.spawn(0, "a", false, |ctx| async move {
        for k in 0..5 {
            ctx.send(1, M::Ping(k)).await?;
        }
        Ok(())
    })
    .unwrap();
    let rep = sim.run();
    let steps: Vec<u64> = rep.log.events.iter().filter(|e| e.kind == EventKind::Send).map(|e| e.step).collect();
    assert_eq!(steps, vec![0, 1, 2, 3, 4]);
}

#[test]
fn same_seed_same_log() {
    let (a, _) = fan_in(42, 4, 20, false);
    let (b, _) = fan_in(42, 4, 20, false);
    assert_eq!(a.log, b.log);
    assert_eq!(a.stats, b.stats);
    let (c, _) = fan_in(43, 4, 20, false);
    assert_ne!(a.log, c.log);
}

proptest! {
    #[test]
    fn channels_are_fifo(seed in any::<u64>(), senders in 1usize..5, n in 1u64..30) {
        let (rep, got) = fan_in(seed, senders, n, false);
        prop_assert!(rep.clean(), "{}", rep.diagnostic());
        prop_assert!(rep.log.fifo_violations().is_empty());
        prop_assert_eq!(rep.log.undelivered(), 0);
        for s in 1..=senders {
            let seen: Vec<u64> = got.iter().filter(|(src, _)| *src == s).map(|(_, k)| *k).collect();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn delivered_counts_match_sends(seed in any::<u64>(), senders in 1usize..5, n in 1u64..20) {
        let (rep, _) = fan_in(seed, senders, n, false);
        let sent: u64 = rep.stats.sent.iter().sum();
        let delivered: u64 = rep.stats.delivered.iter().sum();
        prop_assert_eq!(sent, delivered);
        prop_assert_eq!(rep.stats.delivered[0], senders as u64 * n);
    }
}

#[test]
fn filtered_receive_leaves_others_queued() {
    let mut sim = Sim::<M>::new(cfg(1, 2, 1).round_robin()).unwrap();
    sim.spawn(0, "a", false, |ctx| async move {
        ctx.send(1, M::Tag("x")).await?;
        ctx.send(1, M::Tag("y")).await?;
        ctx.send(1, M::Tag("z")).await?;
        Ok(())
    })
    .unwrap();
    sim.spawn(1, "b", false, |ctx| async move {
        let e = ctx.recv_where(|e| e.msg.op() == "z").await;
        assert_eq!(e.msg, M::Tag("z"));
        assert_eq!(ctx.recv().await.msg, M::Tag("x"));
        assert_eq!(ctx.recv().await.msg, M::Tag("y"));
        Ok(())
    })
    .unwrap();
    let rep = sim.run();
    assert!(rep.clean(), "{}", rep.diagnostic());
}

#[test]
fn recv_until_times_out() {
    let mut sim = Sim::<M>::new(cfg(1, 1, 0).round_robin()).unwrap();
    sim.spawn(0, "a", false, |ctx| async move {
        let r = ctx.recv_until(|_| true, Some(10)).await;
        assert!(r.is_none());
        assert_eq!(ctx.now(), 10);
        Ok(())
    })
    .unwrap();
    assert!(sim.run().clean());
}

#[test]
fn deadlock_is_reported() {
    let mut sim = Sim::<M>::new(cfg(1, 3, 0)).unwrap();
    sim.spawn(0, "waiter", false, |ctx| async move {
        ctx.recv_from(1).await;
        Ok(())
    })
    .unwrap();
    sim.spawn(2, "server", true, |ctx| async move {
        loop {
            ctx.recv().await;
        }
    })
    .unwrap();
    let rep = sim.run();
    assert!(!rep.truncated);
    assert_eq!(rep.blocked, vec![(0, "waiter".to_string())]);
    assert!(!rep.clean());
}

#[test]
fn max_steps_truncates() {
    let mut sim = Sim::<M>::new(cfg(1, 2, 0).with_max_steps(50)).unwrap();
    for c in 0..2 {
        sim.spawn(c, "pp", false, move |ctx| async move {
            if c == 0 {
                ctx.send(1, M::Ping(0)).await?;
            }
            loop {
                let e = ctx.recv().await;
                ctx.send(1 - c, e.msg).await?;
            }
        })
        .unwrap();
    }
    let rep = sim.run();
    assert!(rep.truncated);
    assert!(rep.log.to_csv().ends_with("max_steps reached\n"));
}

#[test]
fn invalid_destination_is_a_fault() {
    let mut sim = Sim::<M>::new(cfg(1, 2, 0)).unwrap();
    sim.spawn(0, "a", false, |ctx| async move {
        ctx.send(9, M::Ping(0)).await?;
        Ok(())
    })
    .unwrap();
    let rep = sim.run();
    assert_eq!(rep.faults, vec![(0, SimError::InvalidCore { core: 9, total: 2 })]);
    assert!(matches!(Sim::<M>::new(cfg(1, 2, 0)).unwrap().spawn(5, "x", false, |_| async { Ok(()) }), Err(SimError::InvalidCore { .. })));
}

#[test]
fn bad_topology_rejected() {
    assert!(matches!(Topology::new(0, 4), Err(SimError::Topology(_))));
}

#[test]
fn dma_takes_ceil_len_over_burst_steps() {
    for (len, burst) in [(1usize, 64usize), (64, 64), (65, 64), (300, 100), (0, 8)] {
        let mut c = cfg(1, 2, 0).round_robin();
        c.dma_burst = burst;
        let mut sim = Sim::<M>::new(c).unwrap();
        sim.preload(Loc { core: 0, addr: 0 }, &vec![7u8; len]).unwrap();
        let t = std::rc::Rc::new(std::cell::Cell::new(0u64));
        let t2 = t.clone();
        sim.spawn(0, "a", false, move |ctx| async move {
            let start = ctx.now();
            ctx.dma_copy(Loc { core: 0, addr: 0 }, Loc { core: 1, addr: 100 }, len).await?;
            t2.set(ctx.now() - start);
            Ok(())
        })
        .unwrap();
        let rep = sim.run();
        assert!(rep.clean());
        let expect = len.div_ceil(burst) as u64;
        assert_eq!(t.get(), expect, "len={len} burst={burst}");
        assert_eq!(sim_mem_after(len, burst), vec![7u8; len]);
    }
}

fn sim_mem_after(len: usize, burst: usize) -> Vec<u8> {
    let mut c = cfg(1, 2, 0).round_robin();
    c.dma_burst = burst;
    let mut sim = Sim::<M>::new(c).unwrap();
    sim.preload(Loc { core: 0, addr: 0 }, &vec![7u8; len]).unwrap();
    let out = std::rc::Rc::new(std::cell::RefCell::new(Vec::new()));
    let o = out.clone();
    sim.spawn(0, "a", false, move |ctx| async move {
        ctx.dma_copy(Loc { core: 0, addr: 0 }, Loc { core: 1, addr: 100 }, len).await?;
        *o.borrow_mut() = ctx.mem_read(Loc { core: 1, addr: 100 }, len).await?;
        Ok(())
    })
    .unwrap();
    sim.run();
    let v = out.borrow().clone();
    v
}

#[test]
fn dma_is_not_atomic() {
    // a reader polling the destination mid-transfer sees a partial copy
    let mut c = cfg(1, 2, 0).round_robin();
    c.dma_burst = 4;
    let mut sim = Sim::<M>::new(c).unwrap();
    sim.preload(Loc { core: 0, addr: 0 }, &[1u8; 16]).unwrap();
    let seen = std::rc::Rc::new(std::cell::RefCell::new(Vec::new()));
    let s = seen.clone();
    sim.spawn(0, "writer", false, |ctx| async move {
        ctx.dma_copy(Loc { core: 0, addr: 0 }, Loc { core: 1, addr: 0 }, 16).await
    })
    .unwrap();
    sim.spawn(1, "reader", false, move |ctx| async move {
        for _ in 0..6 {
            let v = ctx.mem_read(Loc { core: 1, addr: 0 }, 16).await?;
            s.borrow_mut().push(v.iter().filter(|b| **b == 1).count());
        }
        Ok(())
    })
    .unwrap();
    assert!(sim.run().clean());
    let seen = seen.borrow();
    assert!(seen.iter().any(|&n| n > 0 && n < 16), "{seen:?}");
    assert_eq!(*seen.last().unwrap(), 16);
}

#[test]
fn memory_bounds_fault() {
    let mut sim = Sim::<M>::new(cfg(1, 1, 0)).unwrap();
    sim.spawn(0, "a", false, |ctx| async move {
        ctx.mem_write(Loc { core: 0, addr: 64 * 1024 - 2 }, &[0; 4]).await
    })
    .unwrap();
    let rep = sim.run();
    assert!(matches!(rep.faults[0].1, SimError::MemFault { .. }));
}

#[test]
fn cells_are_island_local() {
    let mut sim = Sim::<M>::new(cfg(2, 2, 3)).unwrap();
    for c in 0..4 {
        sim.spawn(c, "inc", false, move |ctx| async move {
            loop {
                let v = ctx.cell_read(0).await.int();
                if ctx.cell_cas(0, v, v + 1).await {
                    break;
                }
            }
            ctx.work(20).await;
            let v = ctx.cell_read(0).await.int();
            assert_eq!(v, 2, "core {c}");
            Ok(())
        })
        .unwrap();
    }
    let rep = sim.run();
    assert!(rep.clean(), "{}", rep.diagnostic());
}

#[test]
fn notes_only_level_filters() {
    let mut sim = Sim::<M>::new(cfg(1, 2, 0).with_log(LogLevel::Notes)).unwrap();
    sim.spawn(0, "a", false, |ctx| async move {
        ctx.note("hello", || "world".into());
        ctx.send(1, M::Ping(1)).await
    })
    .unwrap();
    let rep = sim.run();
    assert_eq!(rep.log.events.len(), 1);
    assert_eq!(rep.log.notes("hello").count(), 1);
    assert_eq!(rep.stats.delivered[1], 1);
}

#[test]
fn fifo_audit_catches_reordering() {
    let ev = |step, kind, seq: u64| Event { step, kind, src: Some(0), dst: Some(1), op: "x".into(), detail: format!("#{seq}") };
    let log = EventLog {
        events: vec![ev(0, EventKind::Send, 0), ev(1, EventKind::Send, 1), ev(2, EventKind::Deliver, 1), ev(3, EventKind::Deliver, 0)],
        truncated: false,
    };
    assert_eq!(log.fifo_violations().len(), 1);
}
