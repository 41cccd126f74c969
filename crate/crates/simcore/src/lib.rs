//! Deterministic discrete-step simulator for a message-passing many-core machine.
//!
//! Cores are grouped into islands. Each core runs at most one process, written as
//! an `async` block over a [`Ctx`]. One scheduler step lets every runnable process
//! take a single action: a send, a receive, a memory or cell access, or a DMA start.
//! Channels are reliable and FIFO per (sender, receiver) pair.

pub mod config;
pub mod log;
mod sim;

pub use config::{CoreId, Costs, LogLevel, SchedMode, SimConfig, Topology};
pub use log::{Event, EventKind, EventLog};
pub use sim::{CellValue, Ctx, DmaId, Envelope, Loc, Message, RunReport, Sim, SimResult, Stats};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("core {core} does not exist (machine has {total} cores)")]
    InvalidCore { core: CoreId, total: usize },
    #[error("bad topology: {0}")]
    Topology(String),
    #[error("memory fault on core {core}: [{addr}, +{len}) out of range")]
    MemFault { core: CoreId, addr: usize, len: usize },
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("protocol error on core {core}: {msg}")]
    Protocol { core: CoreId, msg: String },
}
