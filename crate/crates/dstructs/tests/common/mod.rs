#![allow(dead_code)]

use std::cell::RefCell;
use std::future::Future;
use std::rc::Rc;

use dstructs::{Client, Msg};
use simcore::{CoreId, RunReport, Sim, SimConfig, SimResult, Topology};

pub fn machine(islands: usize, cores: usize, seed: u64) -> Sim<Msg> {
    Sim::new(SimConfig::new(Topology::new(islands, cores).unwrap(), seed)).unwrap()
}

pub fn rr_machine(islands: usize, cores: usize) -> Sim<Msg> {
    Sim::new(SimConfig::new(Topology::new(islands, cores).unwrap(), 0).round_robin()).unwrap()
}

pub type Out<T> = Rc<RefCell<Vec<T>>>;

/// Spawns a client on `core`; whatever the body returns lands in the returned cell.
pub fn client<T, F, Fut>(sim: &mut Sim<Msg>, core: CoreId, master: Option<CoreId>, body: F) -> Out<T>
where
    T: 'static,
    F: FnOnce(Client) -> Fut + 'static,
    Fut: Future<Output = SimResult<Vec<T>>> + 'static,
{
    let out: Out<T> = Rc::new(RefCell::new(Vec::new()));
    let o = out.clone();
    sim.spawn(core, "client", false, move |ctx| async move {
        let v = body(Client::new(ctx, master)).await?;
        o.borrow_mut().extend(v);
        Ok(())
    })
    .unwrap();
    out
}

pub fn assert_clean(rep: &RunReport) {
    assert!(rep.clean(), "truncated={} blocked={:?} faults={:?}", rep.truncated, rep.blocked, rep.faults);
}

pub fn take<T: Clone>(o: &Out<T>) -> Vec<T> {
    o.borrow().clone()
}
